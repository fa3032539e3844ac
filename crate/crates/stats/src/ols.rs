//! Ordinary least squares via Householder QR.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{t_ratio, Design, Estimate};
use crate::error::{Result, StatsError};
use crate::special::student_t_two_sided;

/// Relative threshold on `|R_jj| / ||X_j||` below which a column is treated
/// as linearly dependent on the ones before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub residual_variance: f64,
    pub df_resid: f64,
    pub n: usize,
    pub residuals: Vec<f64>,
    /// Row-major covariance matrix of the coefficient estimates.
    pub covariance: Vec<Vec<f64>>,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    /// Estimate, SE and test of `w' beta`.
    pub fn contrast(&self, weights: &[f64]) -> Estimate {
        linear_combination(&self.coefficients, &self.covariance, weights, self.df_resid)
    }
}

pub(crate) fn linear_combination(beta: &[f64], cov: &[Vec<f64>], w: &[f64], df: f64) -> Estimate {
    let estimate: f64 = beta.iter().zip(w).map(|(b, w)| b * w).sum();
    let mut var = 0.0;
    for (i, wi) in w.iter().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            var += wi * wj * cov[i][j];
        }
    }
    let se = var.max(0.0).sqrt();
    let t = t_ratio(estimate, se);
    Estimate { estimate, se, t, p: student_t_two_sided(t, df) }
}

/// Checks full column rank and returns the triangular factor of the QR.
pub(crate) fn checked_qr(x: &DMatrix<f64>, names: &[String]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..x.ncols() {
        let col_norm = x.column(j).norm();
        if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm {
            return Err(StatsError::RankDeficient(names[j].clone()));
        }
    }
    Ok((qr.q(), r))
}

pub fn ols(y: &[f64], design: &Design) -> Result<RegressionFit> {
    let n = y.len();
    let p = design.ncols();
    design.validate(n)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if n <= p {
        return Err(StatsError::TooFew { needed: p + 1, got: n });
    }
    let x = design.to_matrix();
    let (q, r) = checked_qr(&x, design.names())?;
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::RankDeficient("R".into()))?;
    let fitted = &x * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df_resid = (n - p) as f64;
    let sigma2 = rss / df_resid;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| StatsError::RankDeficient("R".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let covariance: Vec<Vec<f64>> =
        (0..p).map(|i| (0..p).map(|j| sigma2 * xtx_inv[(i, j)]).collect()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let se: Vec<f64> = (0..p).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let t: Vec<f64> = coefficients.iter().zip(&se).map(|(b, s)| t_ratio(*b, *s)).collect();
    let pv = t.iter().map(|t| student_t_two_sided(*t, df_resid)).collect();
    Ok(RegressionFit {
        names: design.names().to_vec(),
        coefficients,
        se,
        t,
        p: pv,
        residual_variance: sigma2,
        df_resid,
        n,
        residuals,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let fit = ols(&y, &Design::new().intercept(10).column("x", x)).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.residual_variance < 1e-25);
    }

    #[test]
    fn orthogonal_response_has_zero_slope() {
        let x = vec![-1.0, 1.0, -1.0, 1.0];
        let y = vec![1.0, 1.0, 2.0, 2.0];
        let fit = ols(&y, &Design::new().intercept(4).column("x", x)).unwrap();
        assert!(fit.coefficients[1].abs() < 1e-14);
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err = ols(&[1.0, 0.0, 2.0, 1.0], &Design::new().intercept(4).column("x", x).column("x2", x2));
        assert_eq!(err.unwrap_err(), StatsError::RankDeficient("x2".into()));
        let err = ols(&[1.0, 0.0, 2.0, 1.0], &Design::new().intercept(4).column("z", vec![0.0; 4]));
        assert!(matches!(err, Err(StatsError::RankDeficient(_))));
    }

    #[test]
    fn too_few_rows() {
        let err = ols(&[1.0, 2.0], &Design::new().intercept(2).column("x", vec![0.0, 1.0]));
        assert!(matches!(err, Err(StatsError::TooFew { .. })));
    }
}
