//! Run configuration.
//!
//! A config is a flat TOML table: one `key = value` per line, no sections.
//! Unknown keys are rejected. Keys not listed as required take the default
//! shown.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `model` | required | `mlp` or `tiny-transformer` |
//! | `layers` | required for `mlp` | layer widths, input first |
//! | `activation` | `relu` | `relu` or `gelu` (mlp hidden layers) |
//! | `d_model`, `d_ff` | 16, 32 | transformer widths |
//! | `task` | required | `two-class-gaussians`, `xor-rings`, `char-sequence-copy`, `teacher-regression` |
//! | `n_train` | 256 | training examples |
//! | `vocab`, `seq_len` | 6, 8 | copy-task alphabet and sequence length |
//! | `optimizer` | required | `lmd`, `adamw`, `mwu`, `mwu-clip`, `gd` |
//! | `lr` | per optimizer | peak learning rate (0.005 lmd/mwu, 0.001 adamw, 0.1 gd) |
//! | `steps` | required | optimizer steps |
//! | `batch_size` | 32 | examples per device and step |
//! | `devices`, `samples` | 1, 1 | J and S: minibatches per step and noise draws per minibatch |
//! | `precision` | `full` | forward matmuls in `full`, `mxfp6` or `mxfp4` |
//! | `sample_mode` | `sampled` | `sampled` or `mean` (LMD forward weights) |
//! | `warmup` | 0 | linear warmup steps |
//! | `floor_frac` | 0.0 | final lr as a fraction of the peak |
//! | `grad_clip` | none | global ℓ2 bound on the loss gradient |
//! | `seed` | 0 | run seed: data, initialization, noise, minibatches |
//! | `out_dir` | required | directory for `metrics.csv` and `checkpoint.json` |
//! | `log_interval` | 10 | steps between metric rows |
//! | `parallel` | false | evaluate the J·S contributions on a thread pool |
//! | `sigma` | 0.125 | LMD noise scale |
//! | `m_r` | 0.01·exp(σ²/2) | LMD prior median |
//! | `beta1`, `beta2` | 0.95, 0.99 (lmd); 0.9, 0.999 (adamw) | momentum coefficients |
//! | `momentum_order` | `lion` | `lion` or `sequential` |
//! | `decay` | `multiplicative` | `multiplicative`, `additive` or `none` |
//! | `grad_scaling` | `by-theta` | `by-theta` or `none` |
//! | `weight_decay` | 0.1 | AdamW decoupled decay |
//! | `eps` | 1e-8 | AdamW denominator guard |
//! | `mwu_clip` | 1.0 | magnitude bound for `mwu-clip` |

use std::path::{Path, PathBuf};

use lmd_core::lmd::{DecayMode, GradScaling, MomentumOrder, SampleMode};
use lmd_core::mx::ElementFormat;
use lmd_core::{Activation, AdamWHyper, LmdHyper, ModelSpec, TaskDims, TaskKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mlp,
    TinyTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Lmd,
    Adamw,
    Mwu,
    MwuClip,
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    Full,
    Mxfp6,
    Mxfp4,
}

impl Precision {
    pub fn format(self) -> Option<ElementFormat> {
        match self {
            Precision::Full => None,
            Precision::Mxfp6 => Some(ElementFormat::Fp6E2M3),
            Precision::Mxfp4 => Some(ElementFormat::Fp4E2M1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "d_ff")]
    pub d_ff: usize,

    pub task: TaskKind,
    #[serde(default = "n_train")]
    pub n_train: usize,
    #[serde(default = "vocab")]
    pub vocab: usize,
    #[serde(default = "seq_len")]
    pub seq_len: usize,

    pub optimizer: OptimizerKind,
    pub lr: Option<f64>,
    pub steps: u64,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub devices: usize,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub sample_mode: SampleMode,
    #[serde(default)]
    pub warmup: u64,
    #[serde(default)]
    pub floor_frac: f64,
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "log_interval")]
    pub log_interval: u64,
    #[serde(default)]
    pub parallel: bool,

    #[serde(default = "sigma")]
    pub sigma: f64,
    pub m_r: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    #[serde(default)]
    pub momentum_order: MomentumOrder,
    #[serde(default)]
    pub decay: DecayMode,
    #[serde(default)]
    pub grad_scaling: GradScaling,
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default = "mwu_clip")]
    pub mwu_clip: f64,
}

fn d_model() -> usize {
    16
}
fn d_ff() -> usize {
    32
}
fn n_train() -> usize {
    256
}
fn vocab() -> usize {
    6
}
fn seq_len() -> usize {
    8
}
fn batch_size() -> usize {
    32
}
fn one() -> usize {
    1
}
fn log_interval() -> u64 {
    10
}
fn sigma() -> f64 {
    0.125
}
fn weight_decay() -> f64 {
    0.1
}
fn eps() -> f64 {
    1e-8
}
fn mwu_clip() -> f64 {
    1.0
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config(msg.into()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model == ModelKind::Mlp && self.layers.len() < 2 {
            return bad("mlp needs `layers` with at least two widths");
        }
        if self.devices == 0 || self.samples == 0 {
            return bad("`devices` and `samples` must be >= 1");
        }
        if self.batch_size == 0 || self.n_train == 0 {
            return bad("`batch_size` and `n_train` must be >= 1");
        }
        if self.log_interval == 0 {
            return bad("`log_interval` must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.floor_frac) {
            return bad(format!("`floor_frac` must lie in [0, 1], got {}", self.floor_frac));
        }
        if self.warmup > self.steps {
            return bad(format!("`warmup` ({}) exceeds `steps` ({})", self.warmup, self.steps));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("`lr` must be > 0, got {lr}"));
            }
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("`grad_clip` must be > 0, got {c}"));
            }
        }
        if self.mwu_clip.is_nan() || self.mwu_clip <= 0.0 {
            return bad("`mwu_clip` must be > 0");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if let Some(b) = b {
                if !(0.0..1.0).contains(&b) {
                    return bad(format!("`{name}` must lie in [0, 1), got {b}"));
                }
            }
        }
        if self.optimizer == OptimizerKind::Lmd {
            self.lmd_hyper().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.model_spec().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Peak learning rate.
    pub fn peak_lr(&self) -> f64 {
        self.lr.unwrap_or(match self.optimizer {
            OptimizerKind::Lmd | OptimizerKind::Mwu | OptimizerKind::MwuClip => 0.005,
            OptimizerKind::Adamw => 0.001,
            OptimizerKind::Gd => 0.1,
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::Mlp => ModelSpec::Mlp { layers: self.layers.clone(), activation: self.activation },
            ModelKind::TinyTransformer => {
                ModelSpec::TinyTransformer { vocab: self.vocab, seq_len: self.seq_len, d_model: self.d_model, d_ff: self.d_ff }
            }
        }
    }

    pub fn task_dims(&self) -> TaskDims {
        let input_dim = self.layers.first().copied().unwrap_or(2);
        TaskDims { input_dim, vocab: self.vocab, seq_len: self.seq_len }
    }

    pub fn lmd_hyper(&self) -> LmdHyper {
        let d = LmdHyper::with_sigma(self.sigma);
        LmdHyper {
            eta: self.peak_lr(),
            m_r: self.m_r.unwrap_or(d.m_r),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            grad_clip: self.grad_clip,
            momentum_order: self.momentum_order,
            decay: self.decay,
            grad_scaling: self.grad_scaling,
            ..d
        }
    }

    pub fn adamw_hyper(&self) -> AdamWHyper {
        let d = AdamWHyper::default();
        AdamWHyper {
            lr: self.peak_lr(),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            weight_decay: self.weight_decay,
            eps: self.eps,
        }
    }
}
