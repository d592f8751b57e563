//! Microscaling (MX) block quantization and bfloat16 rounding.
//!
//! A block holds 32 element codes sharing one signed 8-bit power-of-two
//! scale. Element formats are FP6 E2M3 and FP4 E2M1, both with exponent
//! bias 1, no infinities and no NaN. Decoding an element already applies
//! the bias, so a block value is `2^scale_exp · decode(code)`.
//!
//! The shared exponent is `floor(log2 max|v|) − 2`, where 2 is the largest
//! unbiased element exponent of both formats, clamped to the i8 range.
//! Elements round to nearest with ties to the even code and saturate at
//! the largest magnitude.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tape::MatmulHook;
use crate::tensor::Tensor;

/// Elements per block.
pub const BLOCK_SIZE: usize = 32;

/// Largest finite bfloat16, `(2 − 2⁻⁷) · 2¹²⁷`.
pub const BF16_MAX: f64 = 3.389_531_389_251_535_5e38;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementFormat {
    /// MXFP6, 1 sign, 2 exponent and 3 mantissa bits.
    #[serde(rename = "mxfp6")]
    Fp6E2M3,
    /// MXFP4, 1 sign, 2 exponent and 1 mantissa bit.
    #[serde(rename = "mxfp4")]
    Fp4E2M1,
}

impl ElementFormat {
    pub const EXPONENT_BITS: u32 = 2;
    pub const BIAS: i32 = 1;
    /// Largest unbiased element exponent.
    pub const MAX_EXP: i32 = 2;

    pub fn name(self) -> &'static str {
        match self {
            ElementFormat::Fp6E2M3 => "MXFP6-E2M3",
            ElementFormat::Fp4E2M1 => "MXFP4-E2M1",
        }
    }

    pub fn mantissa_bits(self) -> u32 {
        match self {
            ElementFormat::Fp6E2M3 => 3,
            ElementFormat::Fp4E2M1 => 1,
        }
    }

    pub fn total_bits(self) -> u32 {
        1 + Self::EXPONENT_BITS + self.mantissa_bits()
    }

    /// Number of distinct codes, `2^total_bits`.
    pub fn code_count(self) -> u16 {
        1 << self.total_bits()
    }

    pub fn max_value(self) -> f64 {
        let m = self.mantissa_bits();
        2f64.powi(Self::MAX_EXP) * (2.0 - 2f64.powi(-(m as i32)))
    }
}

impl fmt::Display for ElementFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mxfp6" | "mxfp6-e2m3" | "e2m3" => Ok(ElementFormat::Fp6E2M3),
            "mxfp4" | "mxfp4-e2m1" | "e2m1" => Ok(ElementFormat::Fp4E2M1),
            other => Err(Error::InvalidArgument(format!("unknown MX element format `{other}`"))),
        }
    }
}

/// `floor(log2 a)` for finite `a > 0`, exact for normal `f64`.
fn floor_log2(a: f64) -> i32 {
    let bits = a.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // subnormal f64
        a.log2().floor() as i32
    } else {
        biased - 1023
    }
}

/// Decodes one element code.
pub fn decode_element(code: u8, fmt: ElementFormat) -> f64 {
    let m_bits = fmt.mantissa_bits();
    let mant = (code & ((1 << m_bits) - 1)) as f64;
    let exp = ((code >> m_bits) & 0b11) as i32;
    let negative = (code >> (m_bits + 2)) & 1 == 1;
    let scale = 2f64.powi(m_bits as i32);
    let mag = if exp == 0 {
        2f64.powi(1 - ElementFormat::BIAS) * (mant / scale)
    } else {
        2f64.powi(exp - ElementFormat::BIAS) * (1.0 + mant / scale)
    };
    if negative {
        -mag
    } else {
        mag
    }
}

/// Nearest code to `x` (ties to even, saturating). NaN is rejected.
pub fn encode_element(x: f64, fmt: ElementFormat) -> Result<u8> {
    if x.is_nan() {
        return Err(Error::InvalidArgument("cannot encode NaN".into()));
    }
    let m_bits = fmt.mantissa_bits() as i32;
    let sign_bit = if x.is_sign_negative() { 1u8 << (m_bits + 2) } else { 0 };
    let a = x.abs();
    let max = fmt.max_value();
    let mag = if a >= max {
        max
    } else if a == 0.0 {
        0.0
    } else {
        let e = floor_log2(a).clamp(1 - ElementFormat::BIAS, ElementFormat::MAX_EXP);
        let quantum = 2f64.powi(e - m_bits);
        ((a / quantum).round_ties_even() * quantum).min(max)
    };
    Ok(sign_bit | magnitude_code(mag, m_bits))
}

/// Code bits (without sign) of a grid magnitude.
fn magnitude_code(mag: f64, m_bits: i32) -> u8 {
    let scale = 2f64.powi(m_bits);
    if mag < 1.0 {
        (mag * scale) as u8
    } else {
        let e = floor_log2(mag);
        let mant = ((mag / 2f64.powi(e) - 1.0) * scale) as u8;
        (((e + ElementFormat::BIAS) as u8) << m_bits) | mant
    }
}

/// One quantized block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MxBlock {
    pub format: ElementFormat,
    pub scale_exp: i8,
    pub codes: [u8; BLOCK_SIZE],
}

/// Shared exponent for a block whose largest magnitude is `max_abs`.
pub fn shared_exponent(max_abs: f64) -> i8 {
    if max_abs == 0.0 {
        return 0;
    }
    let e = floor_log2(max_abs) - ElementFormat::MAX_EXP;
    e.clamp(i8::MIN as i32, i8::MAX as i32) as i8
}

/// Quantizes up to 32 values; shorter inputs are zero-padded.
pub fn quantize_block(values: &[f64], fmt: ElementFormat) -> Result<MxBlock> {
    if values.len() > BLOCK_SIZE {
        return Err(shape_err("quantize_block", format!("{} values exceed block size {BLOCK_SIZE}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "quantize_block" });
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_exp = shared_exponent(max_abs);
    let inv = 2f64.powi(-(scale_exp as i32));
    let mut codes = [0u8; BLOCK_SIZE];
    for (c, &v) in codes.iter_mut().zip(values) {
        *c = encode_element(v * inv, fmt)?;
    }
    Ok(MxBlock { format: fmt, scale_exp, codes })
}

/// The 32 values represented by `block`.
pub fn dequantize_block(block: &MxBlock) -> Vec<f64> {
    let scale = 2f64.powi(block.scale_exp as i32);
    block.codes.iter().map(|&c| scale * decode_element(c, block.format)).collect()
}

/// Quantize-dequantize an arbitrary-length run, blocking consecutive
/// groups of 32 with a short final block.
pub fn fake_quantize(values: &[f64], fmt: ElementFormat) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for chunk in values.chunks(BLOCK_SIZE) {
        let block = quantize_block(chunk, fmt)?;
        out.extend_from_slice(&dequantize_block(&block)[..chunk.len()]);
    }
    Ok(out)
}

/// Rounds to the nearest bfloat16 (8 significant bits, binary32 exponent
/// range, ties to even). Overflow returns ±∞; see [`try_round_bf16`].
pub fn round_bf16(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let a = x.abs();
    // below the binary32 normal range the spacing stays 2^-133
    let e = floor_log2(a).max(-126);
    let quantum = 2f64.powi(e - 7);
    let r = (a / quantum).round_ties_even() * quantum;
    let r = if r > BF16_MAX { f64::INFINITY } else { r };
    r.copysign(x)
}

/// [`round_bf16`] that reports overflow as an error.
pub fn try_round_bf16(x: f64) -> Result<f64> {
    let r = round_bf16(x);
    if x.is_finite() && r.is_infinite() {
        Err(Error::Overflow { value: x })
    } else {
        Ok(r)
    }
}

/// Forward matmul emulation: both operands go through bf16 rounding and
/// MX quantize-dequantize along the contraction axis; the product is
/// rounded to bf16 once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MxHook {
    pub format: ElementFormat,
}

pub fn mx_matmul_hook(format: ElementFormat) -> MxHook {
    MxHook { format }
}

impl MxHook {
    fn quantize_lane(&self, lane: &[f64]) -> Result<Vec<f64>> {
        let rounded = lane.iter().map(|&v| try_round_bf16(v)).collect::<Result<Vec<_>>>()?;
        fake_quantize(&rounded, self.format)
    }
}

impl MatmulHook for MxHook {
    fn transform_operands(&self, lhs: &Tensor, rhs: &Tensor) -> Result<(Tensor, Tensor)> {
        let (m, k) = lhs.dims2("mx_matmul_hook")?;
        let (k2, n) = rhs.dims2("mx_matmul_hook")?;
        if k != k2 {
            return Err(shape_err("mx_matmul_hook", format!("inner dimensions {k} and {k2} differ")));
        }
        let mut a = Vec::with_capacity(m * k);
        for row in lhs.data().chunks(k) {
            a.extend(self.quantize_lane(row)?);
        }
        // rhs is blocked down its columns
        let mut b = vec![0.0; k * n];
        let mut col = vec![0.0; k];
        for j in 0..n {
            for (p, c) in col.iter_mut().enumerate() {
                *c = rhs.data()[p * n + j];
            }
            for (p, v) in self.quantize_lane(&col)?.into_iter().enumerate() {
                b[p * n + j] = v;
            }
        }
        Ok((Tensor::new(vec![m, k], a)?, Tensor::new(vec![k, n], b)?))
    }

    fn transform_output(&self, out: Tensor) -> Result<Tensor> {
        let data = out.data().iter().map(|&v| try_round_bf16(v)).collect::<Result<Vec<_>>>()?;
        Tensor::new(out.shape().to_vec(), data)
    }
}
