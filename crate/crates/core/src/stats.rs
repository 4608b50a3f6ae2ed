use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile with linear interpolation between order statistics (the
/// "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub iqr: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Statistics("no values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(SummaryStats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: *sorted.last().unwrap(),
            min: sorted[0],
            iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        })
    }

    /// Field-wise mean over several summaries.
    pub fn average(all: &[SummaryStats]) -> Result<Self> {
        if all.is_empty() {
            return Err(Error::Statistics("no summaries to average".into()));
        }
        let n = all.len() as f64;
        Ok(SummaryStats {
            mean: all.iter().map(|s| s.mean).sum::<f64>() / n,
            max: all.iter().map(|s| s.max).sum::<f64>() / n,
            min: all.iter().map(|s| s.min).sum::<f64>() / n,
            iqr: all.iter().map(|s| s.iqr).sum::<f64>() / n,
        })
    }
}
