use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Tensor;

/// Initialization and regularization route of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    /// Matrices; default-initialized, EG± pair around the prior median.
    Weight,
    /// Additive offsets; same route as `Weight`.
    Bias,
    /// Normalization gains initialized to one (mean 1, soft clip at 2).
    ScaleParam,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::ScaleParam => "scale-param",
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "weight" => Ok(ParamKind::Weight),
            "bias" => Ok(ParamKind::Bias),
            "scale-param" => Ok(ParamKind::ScaleParam),
            other => Err(Error::InvalidArgument(format!("unknown parameter tag `{other}`"))),
        }
    }
}

/// A parameter tensor with its name and routing tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

impl NamedParam {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor) -> Self {
        Self { name: name.into(), kind, value }
    }
}
