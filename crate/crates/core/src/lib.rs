//! Log-normal multiplicative dynamics (LMD) and everything needed to run
//! it at desk scale: a reverse-mode tape, log-normal sampling, reference
//! optimizers, an MX block-quantization emulator, synthetic tasks and
//! small models.

pub mod baselines;
pub mod error;
pub mod lmd;
pub mod lognormal;
pub mod models;
pub mod mx;
pub mod param;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use baselines::{AdamWHyper, AdamWState, GdState, MwuState};
pub use error::{Error, Result};
pub use lmd::{Lmd, LmdCheckpoint, LmdHyper, LmdState};
pub use lognormal::{LogNormalSpec, RngStream};
pub use models::{build, Activation, EvalResult, Model, ModelSpec};
pub use mx::{mx_matmul_hook, ElementFormat, MxBlock, MxHook};
pub use param::{NamedParam, ParamKind};
pub use tape::{MatmulHook, Tape, Var};
pub use tasks::{synthetic_task, Dataset, TaskDims, TaskKind};
pub use tensor::Tensor;
