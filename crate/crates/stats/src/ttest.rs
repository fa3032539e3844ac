//! One-sample, paired and Welch t-tests.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::special::student_t_two_sided;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// Mean (or mean difference) being tested.
    pub mean: f64,
    pub se: f64,
}

pub(crate) fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// `t = (mean - mu0) / (sd / sqrt(n))` with `n - 1` degrees of freedom.
pub fn one_sample_t(xs: &[f64], mu0: f64) -> Result<TTestResult> {
    if xs.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: xs.len() });
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mean, var) = mean_and_var(xs);
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance("sample"));
    }
    let se = (var / xs.len() as f64).sqrt();
    let t = (mean - mu0) / se;
    let df = (xs.len() - 1) as f64;
    Ok(TTestResult { t, df, p_two_sided: student_t_two_sided(t, df), mean: mean - mu0, se })
}

/// Paired test of `x - y` against zero.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    one_sample_t(&diffs, 0.0)
}

/// Welch's unequal-variance two-sample test of `mean(x) - mean(y)`.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(StatsError::TooFew { needed: 2, got: s.len() });
        }
    }
    let (mx, vx) = mean_and_var(x);
    let (my, vy) = mean_and_var(y);
    let ax = vx / x.len() as f64;
    let ay = vy / y.len() as f64;
    if ax + ay <= 0.0 {
        return Err(StatsError::ZeroVariance("both samples"));
    }
    let se = (ax + ay).sqrt();
    let t = (mx - my) / se;
    let df = (ax + ay).powi(2)
        / (ax * ax / (x.len() - 1) as f64 + ay * ay / (y.len() - 1) as f64);
    Ok(TTestResult { t, df, p_two_sided: student_t_two_sided(t, df), mean: mx - my, se })
}
