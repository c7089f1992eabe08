//! Positioning error statistics.

use thiserror::Error;

use crate::scene::Point3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no errors to summarize")]
    Empty,
    #[error("non-finite error value {0}")]
    NonFinite(f64),
}

/// Horizontal distance between estimate and reference (`z` is not estimated).
pub fn position_error(est: &Point3, reference: &Point3) -> f64 {
    (est.x - reference.x).hypot(est.y - reference.y)
}

pub fn position_errors(pairs: &[(Point3, Point3)]) -> Vec<f64> {
    pairs.iter().map(|(e, r)| position_error(e, r)).collect()
}

/// Probability levels of the 1, 2 and 3 sigma quantiles.
pub const SIGMA_LEVELS: [f64; 3] = [0.6827, 0.9545, 0.9973];

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub n: usize,
    pub mean: f64,
    pub rms: f64,
    pub median: f64,
    /// Population variance.
    pub variance: f64,
    pub sigma_quantiles: [f64; 3],
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl ErrorStats {
    /// `(name, value)` pairs in export order.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("n", self.n as f64),
            ("mean", self.mean),
            ("rms", self.rms),
            ("median", self.median),
            ("variance", self.variance),
            ("q_1sigma", self.sigma_quantiles[0]),
            ("q_2sigma", self.sigma_quantiles[1]),
            ("q_3sigma", self.sigma_quantiles[2]),
            ("p25", self.p25),
            ("p50", self.p50),
            ("p75", self.p75),
            ("max", self.max),
        ]
    }
}

/// Quantile of sorted data, linear interpolation between closest ranks
/// (`h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(errors: &[f64]) -> Result<ErrorStats, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = errors.iter().find(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(bad));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // sums over sorted data so the result does not depend on input order
    // shifted by the minimum, which keeps a constant list exactly constant
    let base = sorted[0];
    let mean = base + sorted.iter().map(|v| v - base).sum::<f64>() / n as f64;
    let mean_sq = sorted.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let variance = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let q = |p| quantile_sorted(&sorted, p);
    Ok(ErrorStats {
        n,
        mean,
        rms: mean_sq.sqrt(),
        median: q(0.5),
        variance,
        sigma_quantiles: SIGMA_LEVELS.map(q),
        p25: q(0.25),
        p50: q(0.5),
        p75: q(0.75),
        max: sorted[n - 1],
    })
}

/// Right-continuous ECDF steps `(value, fraction <= value)` over distinct
/// values.
pub fn ecdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    out
}

/// Copy of `errors` clipped at `clip` for plotting; statistics never use it.
pub fn clip_for_plot(errors: &[f64], clip: f64) -> Vec<f64> {
    errors.iter().map(|e| e.min(clip)).collect()
}
