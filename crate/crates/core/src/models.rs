//! Desk-scale models: an MLP and a single-block causal transformer.
//!
//! Initial values θ₀ follow one fixed scheme: every matrix entry is drawn
//! from N(0, 1/fan_in) with fan_in the number of rows, biases start at 0
//! and layer-norm gains at 1. The transformer has no bias parameters; its
//! three layer-norm gains are tagged [`ParamKind::ScaleParam`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{NamedParam, ParamKind};
use crate::tape::{MatmulHook, Tape, Var};
use crate::tasks::Dataset;
use crate::tensor::Tensor;

/// Attention logits outside the causal window.
const MASKED: f64 = -1e9;
/// Examples per evaluation pass over sequence data.
pub const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Fully connected layers `layers[0] -> ... -> layers[last]`, with biases.
    Mlp { layers: Vec<usize>, activation: Activation },
    /// Embedding, one pre-norm attention + MLP block, final norm, unembedding.
    TinyTransformer { vocab: usize, seq_len: usize, d_model: usize, d_ff: usize },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp { layers, .. } => {
                if layers.len() < 2 || layers.contains(&0) {
                    return Err(Error::InvalidArgument(format!("mlp needs >= 2 positive layer sizes, got {layers:?}")));
                }
            }
            ModelSpec::TinyTransformer { vocab, seq_len, d_model, d_ff } => {
                if [*vocab, *seq_len, *d_model, *d_ff].contains(&0) {
                    return Err(Error::InvalidArgument("transformer sizes must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Parameter count from the layer sizes alone.
    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Mlp { layers, .. } => layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum(),
            ModelSpec::TinyTransformer { vocab, seq_len, d_model: d, d_ff } => {
                vocab * d + seq_len * d + 4 * d * d + 2 * d * d_ff + d * vocab + 3 * d
            }
        }
    }
}

/// Name, tag and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDef {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

/// Built model: parameter layout plus the forward program.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    defs: Vec<ParamDef>,
}

/// Loss and task metric of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    /// Accuracy for classification and sequence tasks, RMSE for regression.
    pub metric: f64,
}

fn def(name: impl Into<String>, kind: ParamKind, shape: &[usize]) -> ParamDef {
    ParamDef { name: name.into(), kind, shape: shape.to_vec() }
}

/// Builds the parameter layout and default θ₀ for `spec`, deterministic in
/// `seed`.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<(Model, Vec<NamedParam>)> {
    spec.validate()?;
    let defs = match spec {
        ModelSpec::Mlp { layers, .. } => layers
            .windows(2)
            .enumerate()
            .flat_map(|(i, w)| {
                [def(format!("l{i}.weight"), ParamKind::Weight, &[w[0], w[1]]), def(format!("l{i}.bias"), ParamKind::Bias, &[w[1]])]
            })
            .collect(),
        ModelSpec::TinyTransformer { vocab, seq_len, d_model: d, d_ff } => vec![
            def("tok_embed", ParamKind::Weight, &[*vocab, *d]),
            def("pos_embed", ParamKind::Weight, &[*seq_len, *d]),
            def("ln1.gain", ParamKind::ScaleParam, &[*d]),
            def("attn.q", ParamKind::Weight, &[*d, *d]),
            def("attn.k", ParamKind::Weight, &[*d, *d]),
            def("attn.v", ParamKind::Weight, &[*d, *d]),
            def("attn.o", ParamKind::Weight, &[*d, *d]),
            def("ln2.gain", ParamKind::ScaleParam, &[*d]),
            def("mlp.up", ParamKind::Weight, &[*d, *d_ff]),
            def("mlp.down", ParamKind::Weight, &[*d_ff, *d]),
            def("ln_f.gain", ParamKind::ScaleParam, &[*d]),
            def("unembed", ParamKind::Weight, &[*d, *vocab]),
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(defs.len());
    for d in &defs {
        let n: usize = d.shape.iter().product();
        let data = match d.kind {
            ParamKind::Weight => {
                let std = 1.0 / (d.shape[0] as f64).sqrt();
                (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
            }
            ParamKind::Bias => vec![0.0; n],
            ParamKind::ScaleParam => vec![1.0; n],
        };
        params.push(NamedParam::new(d.name.clone(), d.kind, Tensor::new(d.shape.clone(), data)?));
    }
    Ok((Model { spec: spec.clone(), defs }, params))
}

fn one_hot(rows: usize, cols: usize, hot: impl Iterator<Item = usize>) -> Result<Tensor> {
    let mut data = vec![0.0; rows * cols];
    for (r, c) in hot.enumerate() {
        data[r * cols + c] = 1.0;
    }
    Tensor::new(vec![rows, cols], data)
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn param_count(&self) -> usize {
        self.defs.iter().map(|d| d.shape.iter().product::<usize>()).sum()
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.defs.len() {
            return Err(Error::InvalidArgument(format!("{} tensors for {} parameters", params.len(), self.defs.len())));
        }
        for (p, d) in params.iter().zip(&self.defs) {
            if p.shape() != d.shape.as_slice() {
                return Err(Error::InvalidArgument(format!("`{}` has shape {:?}, expected {:?}", d.name, p.shape(), d.shape)));
            }
        }
        Ok(())
    }

    /// Records the network output (logits or predictions) for `data`.
    pub fn record_output(&self, tape: &mut Tape, params: &[Var], data: &Dataset, hook: Option<&dyn MatmulHook>) -> Result<Var> {
        match (&self.spec, data) {
            (ModelSpec::Mlp { layers, activation }, Dataset::Classification { x, .. } | Dataset::Regression { x, .. }) => {
                if x.shape()[1] != layers[0] {
                    return Err(Error::InvalidArgument(format!("input width {} vs mlp input {}", x.shape()[1], layers[0])));
                }
                let mut h = tape.constant(x.clone())?;
                let n_layers = layers.len() - 1;
                for l in 0..n_layers {
                    let z = tape.linear(h, params[2 * l], hook)?;
                    h = tape.add_row(z, params[2 * l + 1])?;
                    if l + 1 < n_layers {
                        h = match activation {
                            Activation::Relu => tape.relu(h)?,
                            Activation::Gelu => tape.gelu(h)?,
                        };
                    }
                }
                Ok(h)
            }
            (ModelSpec::TinyTransformer { vocab, seq_len, d_model, .. }, Dataset::Sequence { seqs, vocab: dv, .. }) => {
                if dv != vocab || seqs.iter().any(|s| s.len() != *seq_len) {
                    return Err(Error::InvalidArgument("sequence data does not match transformer vocab/seq_len".into()));
                }
                self.record_transformer(tape, params, seqs, (*vocab, *seq_len, *d_model), hook)
            }
            _ => Err(Error::InvalidArgument("dataset kind does not fit this model".into())),
        }
    }

    fn record_transformer(
        &self,
        tape: &mut Tape,
        p: &[Var],
        seqs: &[Vec<usize>],
        (vocab, seq_len, d): (usize, usize, usize),
        hook: Option<&dyn MatmulHook>,
    ) -> Result<Var> {
        let rows = seqs.len() * seq_len;
        let tokens = tape.constant(one_hot(rows, vocab, seqs.iter().flatten().copied())?)?;
        let positions = tape.constant(one_hot(rows, seq_len, (0..rows).map(|r| r % seq_len))?)?;
        // block-diagonal causal mask over the flattened batch
        let mut mask = vec![MASKED; rows * rows];
        for i in 0..rows {
            let start = i - i % seq_len;
            for j in start..=i {
                mask[i * rows + j] = 0.0;
            }
        }
        let mask = tape.constant(Tensor::new(vec![rows, rows], mask)?)?;

        let tok = tape.matmul(tokens, p[0])?;
        let pos = tape.matmul(positions, p[1])?;
        let mut h = tape.add(tok, pos)?;

        let n1 = tape.layer_norm(h)?;
        let a = tape.mul_row(n1, p[2])?;
        let q = tape.linear(a, p[3], hook)?;
        let k = tape.linear(a, p[4], hook)?;
        let v = tape.linear(a, p[5], hook)?;
        let kt = tape.transpose(k)?;
        let scores = tape.linear(q, kt, hook)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
        let scores = tape.add(scores, mask)?;
        let attn = tape.softmax(scores)?;
        let ctx = tape.linear(attn, v, hook)?;
        let out = tape.linear(ctx, p[6], hook)?;
        h = tape.add(h, out)?;

        let n2 = tape.layer_norm(h)?;
        let a2 = tape.mul_row(n2, p[7])?;
        let up = tape.linear(a2, p[8], hook)?;
        let up = tape.gelu(up)?;
        let down = tape.linear(up, p[9], hook)?;
        h = tape.add(h, down)?;

        let nf = tape.layer_norm(h)?;
        let af = tape.mul_row(nf, p[10])?;
        tape.linear(af, p[11], hook)
    }

    /// Records output and training loss; returns `(output, loss)`.
    pub fn record_loss(&self, tape: &mut Tape, params: &[Var], data: &Dataset, hook: Option<&dyn MatmulHook>) -> Result<(Var, Var)> {
        let out = self.record_output(tape, params, data, hook)?;
        let loss = match data {
            Dataset::Classification { y, .. } => {
                let t: Vec<Option<usize>> = y.iter().map(|&c| Some(c)).collect();
                tape.cross_entropy(out, &t)?
            }
            Dataset::Regression { y, .. } => tape.mse(out, y)?,
            Dataset::Sequence { .. } => tape.cross_entropy(out, &sequence_targets(data))?,
        };
        Ok((out, loss))
    }

    /// Loss and gradients with respect to every parameter tensor.
    pub fn loss_and_grads(&self, params: &[Tensor], data: &Dataset, hook: Option<&dyn MatmulHook>) -> Result<(f64, Vec<Tensor>)> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let vars = params.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let (_, loss) = self.record_loss(&mut tape, &vars, data, hook)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], vars.iter().map(|&v| grads.wrt(v)).collect()))
    }

    /// Loss and task metric without gradients. Sequence data is evaluated in
    /// chunks of [`EVAL_CHUNK`] examples since attention over the flattened
    /// batch grows quadratically; the masked scores make this exact.
    pub fn evaluate(&self, params: &[Tensor], data: &Dataset, hook: Option<&dyn MatmulHook>) -> Result<EvalResult> {
        self.check_params(params)?;
        if !matches!(data, Dataset::Sequence { .. }) || data.len() <= EVAL_CHUNK {
            let (loss, hits, total) = self.evaluate_whole(params, data, hook)?;
            let metric = match data {
                Dataset::Regression { .. } => loss.sqrt(),
                _ => hits as f64 / total.max(1) as f64,
            };
            return Ok(EvalResult { loss, metric });
        }
        let (mut loss_sum, mut hits, mut total) = (0.0, 0, 0);
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (loss, h, t) = self.evaluate_whole(params, &data.subset(chunk)?, hook)?;
            loss_sum += loss * t as f64;
            hits += h;
            total += t;
        }
        Ok(EvalResult { loss: loss_sum / total.max(1) as f64, metric: hits as f64 / total.max(1) as f64 })
    }

    /// Mean loss, correct predictions and scored positions in one pass.
    fn evaluate_whole(&self, params: &[Tensor], data: &Dataset, hook: Option<&dyn MatmulHook>) -> Result<(f64, usize, usize)> {
        let mut tape = Tape::new();
        let vars = params.iter().map(|t| tape.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let (out, loss) = self.record_loss(&mut tape, &vars, data, hook)?;
        let loss = tape.value(loss).data()[0];
        let out = tape.value(out);
        let (hits, total) = match data {
            Dataset::Classification { y, .. } => {
                let t: Vec<Option<usize>> = y.iter().map(|&c| Some(c)).collect();
                accuracy(out, &t)
            }
            Dataset::Regression { .. } => (0, 0),
            Dataset::Sequence { .. } => accuracy(out, &sequence_targets(data)),
        };
        Ok((loss, hits, total))
    }
}

/// Next-token targets; only positions whose next token lies in the scored
/// suffix carry a target.
fn sequence_targets(data: &Dataset) -> Vec<Option<usize>> {
    let Dataset::Sequence { seqs, scored_from, .. } = data else {
        return Vec::new();
    };
    seqs.iter()
        .flat_map(|s| (0..s.len()).map(move |t| if t + 1 < s.len() && t + 1 >= *scored_from { Some(s[t + 1]) } else { None }))
        .collect()
}

fn accuracy(logits: &Tensor, targets: &[Option<usize>]) -> (usize, usize) {
    let n = logits.shape()[1];
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            let row = &logits.data()[i * n..(i + 1) * n];
            let arg = (0..n).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += usize::from(arg == t);
            total += 1;
        }
    }
    (hit, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{synthetic_task, TaskDims, TaskKind};

    fn tiny() -> ModelSpec {
        ModelSpec::TinyTransformer { vocab: 6, seq_len: 8, d_model: 8, d_ff: 16 }
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ModelSpec::Mlp { layers: vec![4, 8, 2], activation: Activation::Relu };
        let (_, a) = build(&spec, 0).unwrap();
        let (_, b) = build(&spec, 0).unwrap();
        let (_, c) = build(&spec, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn param_counts_match_closed_form() {
        let spec = ModelSpec::Mlp { layers: vec![4, 8, 2], activation: Activation::Relu };
        let (m, _) = build(&spec, 0).unwrap();
        assert_eq!(m.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(m.param_count(), spec.param_count());
        let (m, _) = build(&tiny(), 0).unwrap();
        assert_eq!(m.param_count(), 6 * 8 + 8 * 8 + 4 * 64 + 2 * 8 * 16 + 8 * 6 + 3 * 8);
        assert_eq!(m.param_count(), tiny().param_count());
    }

    #[test]
    fn transformer_has_scale_params_and_no_biases() {
        let (m, params) = build(&tiny(), 0).unwrap();
        let scales = m.param_defs().iter().filter(|d| d.kind == ParamKind::ScaleParam).count();
        assert!(scales >= 2);
        assert!(m.param_defs().iter().all(|d| d.kind != ParamKind::Bias));
        for p in params.iter().filter(|p| p.kind == ParamKind::ScaleParam) {
            assert!(p.value.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build(&ModelSpec::Mlp { layers: vec![3], activation: Activation::Relu }, 0).is_err());
        assert!(build(&ModelSpec::TinyTransformer { vocab: 0, seq_len: 8, d_model: 8, d_ff: 8 }, 0).is_err());
    }

    #[test]
    fn model_and_task_must_match() {
        let (m, params) = build(&tiny(), 0).unwrap();
        let values: Vec<Tensor> = params.into_iter().map(|p| p.value).collect();
        let data = synthetic_task(TaskKind::XorRings, 8, 0, TaskDims::default()).unwrap();
        assert!(m.evaluate(&values, &data, None).is_err());
    }

    #[test]
    fn transformer_is_causal() {
        let (m, params) = build(&tiny(), 3).unwrap();
        let values: Vec<Tensor> = params.into_iter().map(|p| p.value).collect();
        let a = Dataset::Sequence { seqs: vec![vec![0, 1, 2, 3, 0, 1, 2, 3]], vocab: 6, scored_from: 4 };
        let b = Dataset::Sequence { seqs: vec![vec![0, 1, 2, 3, 5, 5, 5, 5]], vocab: 6, scored_from: 4 };
        let out = |d: &Dataset| {
            let mut t = Tape::new();
            let vars: Vec<Var> = values.iter().map(|v| t.constant(v.clone()).unwrap()).collect();
            let o = m.record_output(&mut t, &vars, d, None).unwrap();
            t.value(o).clone()
        };
        let (oa, ob) = (out(&a), out(&b));
        // the first four positions only see the shared prefix
        assert_eq!(oa.data()[..4 * 6], ob.data()[..4 * 6]);
        assert_ne!(oa.data()[4 * 6..], ob.data()[4 * 6..]);
    }

    #[test]
    fn chunked_evaluation_matches_one_pass() {
        let (m, params) = build(&tiny(), 5).unwrap();
        let values: Vec<Tensor> = params.into_iter().map(|p| p.value).collect();
        let data = synthetic_task(TaskKind::CharSequenceCopy, 3 * EVAL_CHUNK + 5, 1, TaskDims::default()).unwrap();
        let fp6 = crate::mx_matmul_hook(crate::ElementFormat::Fp6E2M3);
        for hook in [None, Some(&fp6 as &dyn MatmulHook)] {
            let chunked = m.evaluate(&values, &data, hook).unwrap();
            let (loss, hits, total) = m.evaluate_whole(&values, &data, hook).unwrap();
            assert!((chunked.loss - loss).abs() < 1e-12 * loss);
            assert_eq!(chunked.metric, hits as f64 / total as f64);
        }
    }

    #[test]
    fn sequence_targets_cover_copy_half() {
        let d = Dataset::Sequence { seqs: vec![vec![1, 2, 1, 2]], vocab: 3, scored_from: 2 };
        assert_eq!(sequence_targets(&d), vec![None, Some(1), Some(2), None]);
    }
}
