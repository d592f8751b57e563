//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records primitives in execution order; [`Tape::backward`]
//! walks it once in reverse. Every public primitive checks shapes and
//! rejects non-finite outputs, naming the primitive in the error.
//!
//! Matrix products can go through a [`MatmulHook`], which rewrites the
//! operands (and optionally the result) in the forward pass only. The
//! backward pass of a hooked product always uses the untransformed
//! operands (straight-through estimator).

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Forward-only transform applied around a matrix product.
pub trait MatmulHook: Send + Sync {
    /// Operands as seen by the forward product. `lhs` is `(m, k)` and `rhs`
    /// is `(k, n)`; `k` is the contraction axis.
    fn transform_operands(&self, lhs: &Tensor, rhs: &Tensor) -> Result<(Tensor, Tensor)>;

    fn transform_output(&self, out: Tensor) -> Result<Tensor> {
        Ok(out)
    }
}

/// Leaves both operands untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityHook;

impl MatmulHook for IdentityHook {
    fn transform_operands(&self, lhs: &Tensor, rhs: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((lhs.clone(), rhs.clone()))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Tensor, count: usize },
    Mse { pred: Var, target: Tensor },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Execution record of one graph evaluation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<Var>,
}

/// Gradient of a scalar output with respect to every recorded node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaves in creation order.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    fn push(&mut self, op: &'static str, value: Tensor, rec: Op) -> Result<Var> {
        let value = check_finite(op, value)?;
        self.nodes.push(Node { value, op: rec });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable input; gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        let v = self.push("leaf", value, Op::Leaf)?;
        self.leaves.push(v);
        Ok(v)
    }

    /// Input that is not differentiated (data, masks, targets).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// Product computed on hook-transformed operands; differentiated as the
    /// plain product of the original operands.
    pub fn matmul_hooked(&mut self, a: Var, b: Var, hook: &dyn MatmulHook) -> Result<Var> {
        let (lhs, rhs) = (self.value(a), self.value(b));
        let (ka, kb) = (lhs.dims2("matmul_hooked")?.1, rhs.dims2("matmul_hooked")?.0);
        if ka != kb {
            return Err(shape_err("matmul_hooked", format!("inner dimensions {ka} and {kb} differ")));
        }
        let (qa, qb) = hook.transform_operands(lhs, rhs)?;
        if qa.shape() != lhs.shape() || qb.shape() != rhs.shape() {
            return Err(shape_err("matmul_hooked", "hook changed operand shapes"));
        }
        let out = hook.transform_output(qa.matmul(&qb)?)?;
        self.push("matmul_hooked", out, Op::MatMul(a, b))
    }

    /// Uses `hook` when given, otherwise a plain product.
    pub fn linear(&mut self, a: Var, b: Var, hook: Option<&dyn MatmulHook>) -> Result<Var> {
        match hook {
            Some(h) => self.matmul_hooked(a, b, h),
            None => self.matmul(a, b),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    fn row_broadcast(&self, op: &'static str, x: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (m, n) = self.value(x).dims2(op)?;
        let r = self.value(row);
        if r.len() != n || r.shape().len() != 1 {
            return Err(shape_err(op, format!("row vector of shape {:?} against {m}x{n}", r.shape())));
        }
        let xd = self.value(x).data();
        let rd = r.data();
        let data = (0..m * n).map(|i| f(xd[i], rd[i % n])).collect();
        Tensor::new(vec![m, n], data)
    }

    /// `x[i, j] + bias[j]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row", x, bias, |a, b| a + b)?;
        self.push("add_row", out, Op::AddRow(x, bias))
    }

    /// `x[i, j] * gain[j]`.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", x, gain, |a, b| a * b)?;
        self.push("mul_row", out, Op::MulRow(x, gain))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push("transpose", out, Op::Transpose(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu);
        self.push("gelu", out, Op::Gelu(x))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("layer_norm")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push("layer_norm", out, Op::LayerNorm { x, inv_std })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("softmax")?;
        let out = softmax_rows(self.value(x).data(), m, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Mean negative log-likelihood over rows with a target; rows with
    /// `None` are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != m {
            return Err(shape_err("cross_entropy", format!("{} targets for {m} rows", targets.len())));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::InvalidArgument("cross_entropy: no target rows".into()));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= n) {
            return Err(shape_err("cross_entropy", format!("target class {bad} out of {n}")));
        }
        let ld = self.value(logits).data();
        let probs = softmax_rows(ld, m, n);
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = &ld[i * n..(i + 1) * n];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                loss += lse - row[t];
            }
        }
        let out = Tensor::scalar(loss / count as f64);
        let probs = Tensor::new(vec![m, n], probs)?;
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        let diff = p.zip_map(target, "mse", |a, b| a - b)?;
        let out = Tensor::scalar(diff.sq_norm() / p.len() as f64);
        self.push("mse", out, Op::Mse { pred, target: target.clone() })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push("mean", out, Op::Mean(x))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(shape_err("backward", "output is not a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::filled(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (target, g) in self.local_grads(node, &dy)? {
                accumulate(&mut grads[target.0], g);
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn local_grads(&self, node: &Node, dy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf | Op::Const => vec![],
            Op::MatMul(a, b) => {
                let da = dy.matmul(&val(*b).transpose()?)?;
                let db = val(*a).transpose()?.matmul(dy)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub(a, b) => vec![(*a, dy.clone()), (*b, dy.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, dy.zip_map(val(*b), "mul", |g, y| g * y)?),
                (*b, dy.zip_map(val(*a), "mul", |g, x| g * x)?),
            ],
            Op::AddRow(x, bias) => {
                let n = val(*bias).len();
                vec![(*x, dy.clone()), (*bias, column_sums(dy.data(), n))]
            }
            Op::MulRow(x, gain) => {
                let n = val(*gain).len();
                let gd = val(*gain).data();
                let dx: Vec<f64> = dy.data().iter().enumerate().map(|(i, g)| g * gd[i % n]).collect();
                let prod: Vec<f64> = dy.data().iter().zip(val(*x).data()).map(|(g, x)| g * x).collect();
                vec![(*x, Tensor::new(dy.shape().to_vec(), dx)?), (*gain, column_sums(&prod, n))]
            }
            Op::Scale(x, c) => vec![(*x, dy.map(|v| v * c))],
            Op::Transpose(x) => vec![(*x, dy.transpose()?)],
            Op::Relu(x) => vec![(*x, dy.zip_map(val(*x), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?)],
            Op::Gelu(x) => vec![(*x, dy.zip_map(val(*x), "gelu", |g, x| g * gelu_grad(x))?)],
            Op::LayerNorm { x, inv_std } => {
                let (m, n) = node.value.dims2("layer_norm")?;
                let y = node.value.data();
                let g = dy.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let (yr, gr) = (&y[i * n..(i + 1) * n], &g[i * n..(i + 1) * n]);
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[i * n + j] = inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                vec![(*x, Tensor::new(vec![m, n], dx)?)]
            }
            Op::Softmax(x) => {
                let (m, n) = node.value.dims2("softmax")?;
                let (y, g) = (node.value.data(), dy.data());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let dot: f64 = (0..n).map(|j| g[i * n + j] * y[i * n + j]).sum();
                    for j in 0..n {
                        dx[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                    }
                }
                vec![(*x, Tensor::new(vec![m, n], dx)?)]
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let n = probs.shape()[1];
                let scale = dy.data()[0] / *count as f64;
                let mut dx = vec![0.0; probs.len()];
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for j in 0..n {
                            dx[i * n + j] = scale * probs.data()[i * n + j];
                        }
                        dx[i * n + t] -= scale;
                    }
                }
                vec![(*logits, Tensor::new(probs.shape().to_vec(), dx)?)]
            }
            Op::Mse { pred, target } => {
                let p = val(*pred);
                let c = 2.0 * dy.data()[0] / p.len() as f64;
                vec![(*pred, p.zip_map(target, "mse", |a, b| c * (a - b))?)]
            }
            Op::Sum(x) => vec![(*x, Tensor::filled(val(*x).shape(), dy.data()[0]))],
            Op::Mean(x) => {
                let v = val(*x);
                vec![(*x, Tensor::filled(v.shape(), dy.data()[0] / v.len() as f64))]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn column_sums(data: &[f64], n: usize) -> Tensor {
    let mut out = vec![0.0; n];
    for (i, v) in data.iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::vector(out)
}

fn softmax_rows(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &data[i * n..(i + 1) * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..n {
            let e = (row[j] - mx).exp();
            out[i * n + j] = e;
            z += e;
        }
        out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// A differentiable program: records a scalar loss on the tape given the
/// leaf handles of its inputs.
pub trait GraphProgram {
    fn record(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var>;
}

impl<F> GraphProgram for F
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fn record(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        self(tape, inputs)
    }
}

/// Result of [`forward`]: the scalar loss and everything needed to
/// differentiate it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub tape: Tape,
    pub output: Var,
    pub inputs: Vec<Var>,
}

/// Registers `inputs` as leaves, runs `program` and returns the loss.
pub fn forward<P: GraphProgram + ?Sized>(program: &P, inputs: &[Tensor]) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let output = program.record(&mut tape, &vars)?;
    let out = tape.value(output);
    if out.len() != 1 {
        return Err(shape_err("forward", format!("loss has shape {:?}, expected a scalar", out.shape())));
    }
    let loss = out.data()[0];
    Ok(Evaluation { loss, tape, output, inputs: vars })
}

/// Gradients of the loss with respect to each input of [`forward`], in order.
pub fn backward(eval: &Evaluation) -> Result<Vec<Tensor>> {
    let grads = eval.tape.backward(eval.output)?;
    Ok(eval.inputs.iter().map(|&v| grads.wrt(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn square_value_and_derivative() {
        let prog = |t: &mut Tape, x: &[Var]| {
            let sq = t.mul(x[0], x[0])?;
            t.sum(sq)
        };
        let eval = forward(&prog, &[Tensor::scalar(3.0)]).unwrap();
        assert_eq!(eval.loss, 9.0);
        assert_eq!(backward(&eval).unwrap()[0].data(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let prog = |t: &mut Tape, _x: &[Var]| t.constant(Tensor::scalar(4.0));
        let eval = forward(&prog, &[Tensor::vector(vec![1.0, 2.0])]).unwrap();
        assert_eq!(backward(&eval).unwrap()[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let prog = |t: &mut Tape, x: &[Var]| t.sum(x[0]);
        let eval = forward(&prog, &[Tensor::scalar(1.0), Tensor::zeros(&[2, 2])]).unwrap();
        let g = backward(&eval).unwrap();
        assert_eq!(g[1], Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn shared_input_accumulates_from_each_consumer() {
        // x*x + 3x at x=2 -> d/dx = 2x + 3 = 7
        let prog = |t: &mut Tape, x: &[Var]| {
            let a = t.mul(x[0], x[0])?;
            let b = t.scale(x[0], 3.0)?;
            let s = t.add(a, b)?;
            t.sum(s)
        };
        let eval = forward(&prog, &[Tensor::scalar(2.0)]).unwrap();
        assert_eq!(backward(&eval).unwrap()[0].data(), &[7.0]);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let prog = |t: &mut Tape, x: &[Var]| {
            let y = t.add(x[0], x[1])?;
            t.sum(y)
        };
        let err = forward(&prog, &[Tensor::zeros(&[2]), Tensor::zeros(&[3])]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "add", .. }), "{err}");
    }

    #[test]
    fn non_finite_intermediate_is_rejected() {
        let prog = |t: &mut Tape, x: &[Var]| {
            let y = t.scale(x[0], f64::MAX)?;
            let y = t.scale(y, 10.0)?;
            t.sum(y)
        };
        let err = forward(&prog, &[Tensor::scalar(1.0)]).unwrap_err();
        assert_eq!(err, Error::NonFinite { op: "scale" });
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let prog = |_t: &mut Tape, x: &[Var]| Ok(x[0]);
        assert!(forward(&prog, &[Tensor::zeros(&[2])]).is_err());
    }

    struct ZeroHook;
    impl MatmulHook for ZeroHook {
        fn transform_operands(&self, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
            Ok((a.map(|_| 0.0), b.map(|_| 0.0)))
        }
    }

    fn hooked_program(hook: Arc<dyn MatmulHook>) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> {
        move |t: &mut Tape, x: &[Var]| {
            let y = t.matmul_hooked(x[0], x[1], hook.as_ref())?;
            let sq = t.mul(y, y)?;
            let s = t.sum(sq)?;
            let lin = t.sum(y)?;
            t.add(s, lin)
        }
    }

    #[test]
    fn identity_hook_matches_plain_matmul_bitwise() {
        let a = Tensor::matrix(2, 3, vec![0.1, -0.7, 1.3, 2.2, 0.5, -1.9]).unwrap();
        let b = Tensor::matrix(3, 2, vec![0.3, 0.8, -1.1, 0.25, 0.6, -0.4]).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a.clone()).unwrap(), tape.leaf(b.clone()).unwrap());
        let y = tape.matmul_hooked(va, vb, &IdentityHook).unwrap();
        assert_eq!(tape.value(y), &a.matmul(&b).unwrap());
    }

    #[test]
    fn zeroing_hook_is_straight_through() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.5, -1.0, 1.5, 2.0]).unwrap();
        let zero = forward(&hooked_program(Arc::new(ZeroHook)), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(zero.loss, 0.0);
        let gz = backward(&zero).unwrap();
        // d/dY of sum(Y^2) + sum(Y) at Y = 0 is 1, so dA = 1 * B^T rows summed
        assert_eq!(gz[0].data(), &[-0.5, 3.5, -0.5, 3.5]);
        assert_eq!(gz[1].data(), &[4.0, 4.0, 6.0, 6.0]);
        assert!(gz.iter().all(|g| g.data().iter().any(|&v| v != 0.0)));
    }
}
