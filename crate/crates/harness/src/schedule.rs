use std::f64::consts::PI;

use crate::error::{HarnessError, Result};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// `floor_frac · peak` at `total`.
pub fn lr_schedule(step: u64, total: u64, warmup: u64, peak: f64, floor_frac: f64) -> Result<f64> {
    if warmup > total {
        return Err(HarnessError::Config(format!("warmup {warmup} exceeds total {total}")));
    }
    if step > total {
        return Err(HarnessError::Config(format!("step {step} beyond total {total}")));
    }
    if !(0.0..=1.0).contains(&floor_frac) {
        return Err(HarnessError::Config(format!("floor fraction {floor_frac} outside [0, 1]")));
    }
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(peak);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    let floor = floor_frac * peak;
    Ok(peak - (peak - floor) * 0.5 * (1.0 - (PI * progress).cos()))
}
