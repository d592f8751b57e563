//! Reproducible synthetic datasets.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Two unit-variance Gaussian blobs whose means sit 4σ from the
    /// separating line.
    TwoClassGaussians,
    /// Two concentric rings cut into alternating angular sectors; the label
    /// is ring XOR sector parity.
    XorRings,
    /// First half random tokens, second half repeats them.
    CharSequenceCopy,
    /// Linear teacher with large coefficients: `y = 16 · Σ sᵢ xᵢ`, `sᵢ = ±1`.
    TeacherRegression,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::TwoClassGaussians => "two-class-gaussians",
            TaskKind::XorRings => "xor-rings",
            TaskKind::CharSequenceCopy => "char-sequence-copy",
            TaskKind::TeacherRegression => "teacher-regression",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-class-gaussians" => Ok(TaskKind::TwoClassGaussians),
            "xor-rings" => Ok(TaskKind::XorRings),
            "char-sequence-copy" => Ok(TaskKind::CharSequenceCopy),
            "teacher-regression" => Ok(TaskKind::TeacherRegression),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// Shape parameters a task needs from the model it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskDims {
    pub input_dim: usize,
    pub vocab: usize,
    pub seq_len: usize,
}

impl Default for TaskDims {
    fn default() -> Self {
        Self { input_dim: 2, vocab: 6, seq_len: 8 }
    }
}

/// Distance of each Gaussian class mean from the decision boundary.
pub const GAUSSIAN_MARGIN: f64 = 4.0;
/// Angular sectors per ring in xor-rings.
pub const XOR_SECTORS: usize = 12;
/// Coefficient magnitude of the regression teacher.
pub const TEACHER_SCALE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Classification { x: Tensor, y: Vec<usize>, classes: usize },
    Regression { x: Tensor, y: Tensor },
    /// Positions before `scored_from` are context only.
    Sequence { seqs: Vec<Vec<usize>>, vocab: usize, scored_from: usize },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Classification { y, .. } => y.len(),
            Dataset::Regression { y, .. } => y.shape()[0],
            Dataset::Sequence { seqs, .. } => seqs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("row {bad} out of {}", self.len())));
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty subset".into()));
        }
        let rows = |t: &Tensor| -> Result<Tensor> {
            let c = t.len() / t.shape()[0];
            let data = indices.iter().flat_map(|&i| t.data()[i * c..(i + 1) * c].iter().copied()).collect();
            Tensor::new(vec![indices.len(), c], data)
        };
        Ok(match self {
            Dataset::Classification { x, y, classes } => Dataset::Classification {
                x: rows(x)?,
                y: indices.iter().map(|&i| y[i]).collect(),
                classes: *classes,
            },
            Dataset::Regression { x, y } => Dataset::Regression { x: rows(x)?, y: rows(y)? },
            Dataset::Sequence { seqs, vocab, scored_from } => Dataset::Sequence {
                seqs: indices.iter().map(|&i| seqs[i].clone()).collect(),
                vocab: *vocab,
                scored_from: *scored_from,
            },
        })
    }

    /// `batch` distinct rows drawn with `rng`, or everything when
    /// `batch >= len`.
    pub fn minibatch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Dataset> {
        if batch >= self.len() {
            return Ok(self.clone());
        }
        let mut idx = index::sample(rng, self.len(), batch).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Builds `n` examples of `task`.
pub fn synthetic_task(task: TaskKind, n: usize, seed: u64, dims: TaskDims) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one example".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        TaskKind::TwoClassGaussians => {
            if dims.input_dim != 2 {
                return Err(Error::InvalidArgument("two-class-gaussians is 2-dimensional".into()));
            }
            let c = GAUSSIAN_MARGIN / std::f64::consts::SQRT_2;
            let mut x = Vec::with_capacity(2 * n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let label = i % 2;
                let s = if label == 1 { 1.0 } else { -1.0 };
                x.push(s * c + normal(&mut rng));
                x.push(s * c + normal(&mut rng));
                y.push(label);
            }
            Ok(Dataset::Classification { x: Tensor::new(vec![n, 2], x)?, y, classes: 2 })
        }
        TaskKind::XorRings => {
            if dims.input_dim != 2 {
                return Err(Error::InvalidArgument("xor-rings is 2-dimensional".into()));
            }
            let mut x = Vec::with_capacity(2 * n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let ring = i % 2;
                let radius = 1.0 + ring as f64 + 0.1 * normal(&mut rng);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let sector = (angle / (std::f64::consts::TAU / XOR_SECTORS as f64)) as usize % 2;
                x.push(radius * angle.cos());
                x.push(radius * angle.sin());
                y.push(ring ^ sector);
            }
            Ok(Dataset::Classification { x: Tensor::new(vec![n, 2], x)?, y, classes: 2 })
        }
        TaskKind::CharSequenceCopy => {
            if dims.seq_len < 2 || !dims.seq_len.is_multiple_of(2) || dims.vocab < 2 {
                return Err(Error::InvalidArgument("char-sequence-copy needs an even seq_len >= 2 and vocab >= 2".into()));
            }
            let half = dims.seq_len / 2;
            let seqs = (0..n)
                .map(|_| {
                    let head: Vec<usize> = (0..half).map(|_| rng.random_range(0..dims.vocab)).collect();
                    head.iter().chain(&head).copied().collect()
                })
                .collect();
            Ok(Dataset::Sequence { seqs, vocab: dims.vocab, scored_from: half })
        }
        TaskKind::TeacherRegression => {
            let d = dims.input_dim;
            let coef: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { TEACHER_SCALE } else { -TEACHER_SCALE }).collect();
            let mut x = Vec::with_capacity(n * d);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let row: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
                y.push(row.iter().zip(&coef).map(|(a, b)| a * b).sum());
                x.extend(row);
            }
            Ok(Dataset::Regression { x: Tensor::new(vec![n, d], x)?, y: Tensor::new(vec![n, 1], y)? })
        }
    }
}
