//! Pearson correlation and the Fisher z transform.

use crate::error::{Result, StatsError};

/// Clamp bound applied to `r` before the Fisher transform so perfect
/// correlations still map to a finite z.
pub const R_CLAMP_EPS: f64 = 1e-7;

/// Product-moment correlation of two equal-length series (n >= 3).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `atanh(r)` for `|r| < 1`.
pub fn fisher_z(r: f64) -> Result<f64> {
    if !(r.abs() < 1.0) {
        return Err(StatsError::OutOfRange(r));
    }
    // evaluated on |r| so the transform is exactly odd
    let a = r.abs();
    Ok(r.signum() * 0.5 * (2.0 * a / (1.0 - a)).ln_1p())
}

/// Clamp `r` into `[-(1 - eps), 1 - eps]`.
pub fn clamp_r(r: f64) -> f64 {
    r.clamp(-(1.0 - R_CLAMP_EPS), 1.0 - R_CLAMP_EPS)
}
