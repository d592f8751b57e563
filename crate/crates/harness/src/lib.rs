//! Experiment harness for LMD and its baselines: run configs, the learning
//! rate schedule, the training loop, run comparison and an MX inspector.

pub mod compare;
pub mod config;
pub mod error;
pub mod inspect;
pub mod schedule;
pub mod train;

pub use config::{OptimizerKind, Precision, RunConfig};
pub use error::{HarnessError, Result};
pub use train::{train, Checkpoint, MetricRecord, Trainer};
