//! Evaluation metrics: MAPE, error-bound accuracy, and tie-adjusted
//! Kendall rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics for one evaluation run, with a per-family breakdown sorted
/// by family name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mape_pct: f64,
    pub acc_at_10_pct: f64,
    pub kendall_tau: f64,
    pub n_samples: usize,
    pub per_family: Vec<FamilyMetrics>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyMetrics {
    pub family: String,
    pub mape_pct: f64,
    pub acc_at_10_pct: f64,
    pub n_samples: usize,
}

fn check_lengths(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "metric inputs of different lengths: {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("metric inputs are empty".into()));
    }
    if let Some(bad) = targets.iter().find(|t| !t.is_finite() || **t <= 0.0) {
        return Err(Error::Contract(format!("nonpositive target {bad}")));
    }
    Ok(())
}

/// `100 * mean(|p - t| / t)`.
pub fn mape(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds, targets)?;
    let sum: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs() / t).sum();
    Ok(100.0 * sum / preds.len() as f64)
}

/// Percentage of predictions with relative error strictly below
/// `delta`. The boundary case `|p - t| / t == delta` does not count.
pub fn acc_at(preds: &[f64], targets: &[f64], delta: f64) -> Result<f64> {
    check_lengths(preds, targets)?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Contract(format!("delta must be positive, got {delta}")));
    }
    let hits = preds
        .iter()
        .zip(targets)
        .filter(|(p, t)| (*p - *t).abs() / *t < delta)
        .count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Tie-adjusted Kendall rank correlation (tau-b):
/// `(C - D) / sqrt((n0 - t_x)(n0 - t_y))` over all pairs. Inputs that
/// are constant on either side have no defined ordering and error out.
pub fn kendall_tau(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Contract(format!(
            "metric inputs of different lengths: {} vs {}",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len();
    if n < 2 {
        return Err(Error::Contract("kendall_tau needs at least 2 samples".into()));
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = preds[i] - preds[j];
            let dy = targets[i] - targets[j];
            if dx == 0.0 && dy == 0.0 {
                ties_x += 1;
                ties_y += 1;
            } else if dx == 0.0 {
                ties_x += 1;
            } else if dy == 0.0 {
                ties_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Contract("kendall_tau undefined: one side entirely tied".into()));
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// Full report over predictions with family labels.
pub fn report(
    preds: &[f64],
    targets: &[f64],
    families: &[String],
) -> Result<MetricsReport> {
    check_lengths(preds, targets)?;
    if families.len() != preds.len() {
        return Err(Error::Contract("family labels length mismatch".into()));
    }
    let mut names: Vec<&String> = families.iter().collect();
    names.sort_unstable();
    names.dedup();
    let mut per_family = Vec::with_capacity(names.len());
    for name in names {
        let idx: Vec<usize> = (0..preds.len()).filter(|&i| &families[i] == name).collect();
        let fp: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
        let ft: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        per_family.push(FamilyMetrics {
            family: name.clone(),
            mape_pct: mape(&fp, &ft)?,
            acc_at_10_pct: acc_at(&fp, &ft, 0.10)?,
            n_samples: idx.len(),
        });
    }
    Ok(MetricsReport {
        mape_pct: mape(preds, targets)?,
        acc_at_10_pct: acc_at(preds, targets, 0.10)?,
        kendall_tau: kendall_tau(preds, targets)?,
        n_samples: preds.len(),
        per_family,
    })
}
