use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean session accuracy and performance drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub a_avg: f64,
    /// First session accuracy minus last.
    pub pd: f64,
}

/// `A_avg` (mean of every `A_t`) and `PD` (`A_0 − A_M`).
pub fn compute_metrics(accuracies: &[f64]) -> Result<Metrics> {
    let (Some(first), Some(last)) = (accuracies.first(), accuracies.last()) else {
        return Err(Error::InvalidInput("no session accuracies".into()));
    };
    Ok(Metrics {
        a_avg: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
        pd: first - last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    /// `train − val` at each checkpoint.
    pub gap: Vec<f64>,
    /// Last entry of `gap`, if any.
    pub final_gap: Option<f64>,
}

/// Elementwise train-minus-validation accuracy.
pub fn overfit_gap(train: &[f64], val: &[f64]) -> Result<GapSeries> {
    if train.len() != val.len() {
        return Err(Error::Shape(format!(
            "{} train checkpoints against {} validation checkpoints",
            train.len(),
            val.len()
        )));
    }
    let gap: Vec<f64> = train.iter().zip(val).map(|(t, v)| t - v).collect();
    Ok(GapSeries {
        final_gap: gap.last().copied(),
        gap,
    })
}

/// Median of a non-empty sample; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}
