//! The training loop.
//!
//! Per step, J minibatches are drawn and each is evaluated S times; for LMD
//! every one of the J·S evaluations gets its own noise stream (stream id
//! `j·S + s`). Contributions are reduced in index order, so running them on
//! a thread pool gives the same bits as running them one after another.
//! Metrics are evaluated on the full training set at the mean weights,
//! with the configured forward precision.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lmd_core::baselines::{AdamWState, GdState, MwuState};
use lmd_core::lmd::{aggregate, Contribution};
use lmd_core::tensor::{clip_global_norm, global_l2_norm};
use lmd_core::{build, synthetic_task, Dataset, Lmd, LmdCheckpoint, MatmulHook, Model, MxHook, RngStream, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{OptimizerKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::schedule::lr_schedule;

pub const CSV_HEADER: &str = "step,loss,eval_metric,weight_l2,momentum_l2_pos,lr";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const ABORT_FILE: &str = "abort.txt";

// Independent seed lanes derived from the run seed.
const INIT_LANE: u64 = u64::MAX;
const DATA_LANE: u64 = u64::MAX - 1;
const BATCH_SALT: u64 = 0x6d69_6e69_6261_7463;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: f64,
    pub eval_metric: f64,
    pub weight_l2: f64,
    pub momentum_l2_pos: f64,
    pub lr: f64,
}

impl MetricRecord {
    /// One CSV line, reals with 17 significant digits.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.step, self.loss, self.eval_metric, self.weight_l2, self.momentum_l2_pos, self.lr
        )
    }

    fn is_finite(&self) -> bool {
        [self.loss, self.eval_metric, self.weight_l2, self.momentum_l2_pos, self.lr].iter().all(|v| v.is_finite())
    }
}

/// Saved optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "optimizer", content = "state", rename_all = "kebab-case")]
pub enum Checkpoint {
    Lmd(LmdCheckpoint),
    Adamw(AdamWState),
    Mwu(MwuState),
    Gd(GdState),
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Core(lmd_core::Error::Checkpoint(e.to_string())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?)
    }
}

#[derive(Debug, Clone)]
enum Optimizer {
    Lmd(Lmd),
    Adamw(AdamWState),
    Mwu(MwuState),
    Gd(GdState),
}

/// Result of one step's J·S evaluations.
#[derive(Debug, Clone, PartialEq)]
pub enum Update {
    Lmd(Contribution),
    Grads(Vec<Tensor>),
}

/// Core errors raised by non-finite values become numerical aborts.
fn numerical(step: u64) -> impl Fn(lmd_core::Error) -> HarnessError {
    move |e| match e {
        lmd_core::Error::NonFinite { .. } | lmd_core::Error::Overflow { .. } => {
            HarnessError::NumericalAbort { step, detail: e.to_string() }
        }
        other => HarnessError::Core(other),
    }
}

fn config_err(e: lmd_core::Error) -> HarnessError {
    HarnessError::Config(e.to_string())
}

pub struct Trainer {
    cfg: RunConfig,
    model: Model,
    data: Dataset,
    hook: Option<MxHook>,
    opt: Optimizer,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, params) = build(&cfg.model_spec(), RngStream::derive_seed(cfg.seed, INIT_LANE)).map_err(config_err)?;
        let data = synthetic_task(cfg.task, cfg.n_train, RngStream::derive_seed(cfg.seed, DATA_LANE), cfg.task_dims())
            .map_err(config_err)?;
        let values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
        // a shape check on one example catches model/task mismatches up front
        model.evaluate(&values, &data.subset(&[0]).map_err(config_err)?, None).map_err(config_err)?;
        let opt = match cfg.optimizer {
            OptimizerKind::Lmd => Optimizer::Lmd(Lmd::new(cfg.lmd_hyper(), &params).map_err(config_err)?),
            OptimizerKind::Adamw => Optimizer::Adamw(AdamWState::new(values, cfg.adamw_hyper())),
            OptimizerKind::Mwu => Optimizer::Mwu(MwuState::new(values, None).map_err(config_err)?),
            OptimizerKind::MwuClip => Optimizer::Mwu(MwuState::new(values, Some(cfg.mwu_clip)).map_err(config_err)?),
            OptimizerKind::Gd => Optimizer::Gd(GdState::new(values)),
        };
        let hook = cfg.precision.format().map(lmd_core::mx_matmul_hook);
        Ok(Self { cfg, model, data, hook, opt, step: 0 })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    fn hook(&self) -> Option<&dyn MatmulHook> {
        self.hook.as_ref().map(|h| h as &dyn MatmulHook)
    }

    /// Network weights used for evaluation: the distribution mean for LMD.
    pub fn weights(&self) -> Vec<Tensor> {
        match &self.opt {
            Optimizer::Lmd(l) => l.mean_weights(),
            Optimizer::Adamw(a) => a.params.clone(),
            Optimizer::Mwu(m) => m.params.clone(),
            Optimizer::Gd(g) => g.params.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        match &self.opt {
            Optimizer::Lmd(l) => Checkpoint::Lmd(l.checkpoint()),
            Optimizer::Adamw(a) => Checkpoint::Adamw(a.clone()),
            Optimizer::Mwu(m) => Checkpoint::Mwu(m.clone()),
            Optimizer::Gd(g) => Checkpoint::Gd(g.clone()),
        }
    }

    fn lr_at(&self, step: u64) -> Result<f64> {
        lr_schedule(step, self.cfg.steps, self.cfg.warmup, self.cfg.peak_lr(), self.cfg.floor_frac)
    }

    /// Metrics for the current state; `step` labels the row.
    pub fn record(&self) -> Result<MetricRecord> {
        let eval = self.model.evaluate(&self.weights(), &self.data, self.hook()).map_err(numerical(self.step))?;
        let (weight_l2, momentum_l2_pos) = match &self.opt {
            Optimizer::Lmd(l) => (l.weight_l2(), l.momentum_l2_pos()),
            Optimizer::Adamw(a) => (global_l2_norm(&a.params), a.first_moment_l2()),
            Optimizer::Mwu(m) => (global_l2_norm(&m.params), 0.0),
            Optimizer::Gd(g) => (global_l2_norm(&g.params), 0.0),
        };
        let rec = MetricRecord {
            step: self.step,
            loss: eval.loss,
            eval_metric: eval.metric,
            weight_l2,
            momentum_l2_pos,
            lr: self.lr_at(self.step)?,
        };
        if !rec.is_finite() {
            return Err(HarnessError::NumericalAbort { step: self.step, detail: format!("non-finite metrics {rec:?}") });
        }
        Ok(rec)
    }

    fn minibatches(&self, step: u64) -> Result<Vec<Dataset>> {
        let seed = RngStream::derive_seed(self.cfg.seed ^ BATCH_SALT, step);
        (0..self.cfg.devices)
            .map(|j| {
                let mut rng = RngStream::new(seed, j as u64).generator();
                self.data.minibatch(self.cfg.batch_size, &mut rng).map_err(HarnessError::Core)
            })
            .collect()
    }

    fn map_contributions<T: Send>(&self, n: usize, parallel: bool, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let results: Vec<Result<T>> = if parallel { (0..n).into_par_iter().map(f).collect() } else { (0..n).map(f).collect() };
        results.into_iter().collect()
    }

    /// Aggregated update for the next step, with per-contribution losses.
    /// `parallel` overrides the config so both paths can be compared.
    pub fn compute_update(&self, parallel: bool) -> Result<(Update, Vec<f64>)> {
        let step = self.step + 1;
        let batches = self.minibatches(step)?;
        let (s, hook) = (self.cfg.samples, self.hook());
        let finite = |loss: f64| {
            if loss.is_finite() {
                Ok(())
            } else {
                Err(HarnessError::NumericalAbort { step, detail: format!("training loss is {loss}") })
            }
        };
        match &self.opt {
            Optimizer::Lmd(lmd) => {
                let noise_seed = RngStream::derive_seed(self.cfg.seed, step);
                let out = self.map_contributions(self.cfg.devices * s, parallel, |c| {
                    let ctx = lmd.sample_with_mode(self.cfg.sample_mode, RngStream::new(noise_seed, c as u64));
                    let (loss, grads) =
                        self.model.loss_and_grads(&ctx.theta_trick(), &batches[c / s], hook).map_err(numerical(step))?;
                    finite(loss)?;
                    Ok((lmd.contribution(&ctx, &grads).map_err(numerical(step))?, loss))
                })?;
                let (contribs, losses): (Vec<_>, Vec<_>) = out.into_iter().unzip();
                Ok((Update::Lmd(aggregate(&contribs).map_err(numerical(step))?), losses))
            }
            _ => {
                let params = self.weights();
                let out = self.map_contributions(self.cfg.devices, parallel, |j| {
                    let (loss, grads) = self.model.loss_and_grads(&params, &batches[j], hook).map_err(numerical(step))?;
                    finite(loss)?;
                    Ok((grads, loss))
                })?;
                let n = out.len() as f64;
                let mut mean: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                let mut losses = Vec::with_capacity(out.len());
                for (grads, loss) in out {
                    for (m, g) in mean.iter_mut().zip(&grads) {
                        m.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                    }
                    losses.push(loss);
                }
                mean.iter_mut().for_each(|m| m.data_mut().iter_mut().for_each(|v| *v /= n));
                if let Some(c) = self.cfg.grad_clip {
                    clip_global_norm(&mut mean, c);
                }
                Ok((Update::Grads(mean), losses))
            }
        }
    }

    /// Applies `update` as the next step.
    pub fn apply(&mut self, update: &Update) -> Result<()> {
        let step = self.step + 1;
        let lr = self.lr_at(step)?;
        let err = numerical(step);
        match (&mut self.opt, update) {
            (Optimizer::Lmd(l), Update::Lmd(c)) => l.step_with_lr(c, lr).map_err(err)?,
            (Optimizer::Adamw(a), Update::Grads(g)) => a.adamw_step_with_lr(g, lr).map_err(err)?,
            (Optimizer::Mwu(m), Update::Grads(g)) => m.mwu_step(g, lr).map_err(err)?,
            (Optimizer::Gd(s), Update::Grads(g)) => s.gd_step(g, lr).map_err(err)?,
            _ => return Err(HarnessError::Core(lmd_core::Error::InvalidArgument("update does not fit optimizer".into()))),
        }
        self.step = step;
        Ok(())
    }

    pub fn train_step(&mut self) -> Result<()> {
        let (update, _) = self.compute_update(self.cfg.parallel)?;
        self.apply(&update)
    }

    fn due(&self) -> bool {
        self.step.is_multiple_of(self.cfg.log_interval) || self.step == self.cfg.steps
    }

    /// Runs all remaining steps, handing each metric row to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&MetricRecord) -> Result<()>) -> Result<Vec<MetricRecord>> {
        let mut records = Vec::new();
        if self.step == 0 {
            let r = self.record()?;
            sink(&r)?;
            records.push(r);
        }
        while self.step < self.cfg.steps {
            self.train_step()?;
            if self.due() {
                let r = self.record()?;
                sink(&r)?;
                records.push(r);
            }
        }
        Ok(records)
    }
}

/// Files written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub records: Vec<MetricRecord>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Runs `cfg`, streaming `metrics.csv` into `out_dir` and writing
/// `checkpoint.json` only after the last step succeeded. A numerical abort
/// leaves the rows logged so far plus `abort.txt`.
pub fn train(cfg: RunConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg)?;
    let dir = trainer.config().out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let (metrics, checkpoint, abort) = (dir.join(METRICS_FILE), dir.join(CHECKPOINT_FILE), dir.join(ABORT_FILE));
    // outputs of an earlier run in the same directory must not survive
    for stale in [&checkpoint, &abort] {
        if stale.exists() {
            fs::remove_file(stale).map_err(|e| HarnessError::io(stale, e))?;
        }
    }
    let file = File::create(&metrics).map_err(|e| HarnessError::io(&metrics, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{CSV_HEADER}").map_err(|e| HarnessError::io(&metrics, e))?;
    let result = trainer.run(|r| writeln!(out, "{}", r.csv_row()).map_err(|e| HarnessError::io(&metrics, e)));
    out.flush().map_err(|e| HarnessError::io(&metrics, e))?;
    match result {
        Ok(records) => {
            write_atomic(&checkpoint, &trainer.checkpoint().to_json())?;
            Ok(TrainOutput { records, metrics, checkpoint })
        }
        Err(e) => {
            if let HarnessError::NumericalAbort { step, detail } = &e {
                fs::write(&abort, format!("step {step}: {detail}\n")).map_err(|err| HarnessError::io(&abort, err))?;
            }
            Err(e)
        }
    }
}

