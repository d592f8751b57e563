use lmd_core::mx::{dequantize_block, quantize_block, ElementFormat, BLOCK_SIZE};

use crate::error::{HarnessError, Result};

pub fn parse_values(csv: &str) -> Result<Vec<f64>> {
    let values = csv
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| HarnessError::Config(format!("`{s}` is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(HarnessError::Config("no values given".into()));
    }
    Ok(values)
}

/// One line per element: `index,block,scale_exp,code,decoded,input`,
/// blocking consecutive runs of 32.
pub fn mx_inspect(format: ElementFormat, values: &[f64]) -> Result<String> {
    let mut out = String::from("index,block,scale_exp,code,decoded,input\n");
    for (b, chunk) in values.chunks(BLOCK_SIZE).enumerate() {
        let block = quantize_block(chunk, format).map_err(|e| HarnessError::Config(e.to_string()))?;
        let decoded = dequantize_block(&block);
        for (i, &x) in chunk.iter().enumerate() {
            out.push_str(&format!(
                "{},{b},{},{:#04x},{},{}\n",
                b * BLOCK_SIZE + i,
                block.scale_exp,
                block.codes[i],
                decoded[i],
                x
            ));
        }
    }
    Ok(out)
}
