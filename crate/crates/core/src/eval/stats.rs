use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

pub fn aggregate_seeds(values: &[f64]) -> Result<SeedStats> {
    if values.is_empty() {
        return Err(Error::input("aggregate_seeds: no values"));
    }
    if values.iter().all(|v| *v == values[0]) {
        // the summed mean of equal values can be off by an ulp
        return Ok(SeedStats {
            mean: values[0],
            std: 0.0,
            n: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(SeedStats {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}
