//! Linear mixed model with a single random intercept, fitted by profiled REML.
//!
//! With `V = I + lambda * Z Z'` (block diagonal, one block per group) every
//! block inverse is available in closed form by Sherman-Morrison:
//!
//! ```text
//! V_g^{-1} = I - c_g 1 1',   c_g = lambda / (1 + lambda n_g),   log|V_g| = ln(1 + lambda n_g)
//! ```
//!
//! so for a fixed variance ratio `lambda = sigma_b^2 / sigma_e^2` the GLS
//! estimate, the profiled residual variance and the restricted likelihood are
//! all cheap. The only numerical search is one-dimensional, over `ln lambda`.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{t_ratio, Design, Estimate};
use crate::error::{Result, StatsError};
use crate::ols::{checked_qr, linear_combination};
use crate::special::student_t_two_sided;

pub const LOG_LAMBDA_MIN: f64 = -12.0;
pub const LOG_LAMBDA_MAX: f64 = 12.0;
pub const GRID_POINTS: usize = 64;
pub const SEARCH_TOL: f64 = 1e-8;
const GOLDEN_MAX_ITER: usize = 200;
/// Keeps `ln(q)` finite when the data are fitted exactly.
const QUAD_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    /// Row-major covariance of the fixed-effect estimates.
    pub covariance: Vec<Vec<f64>>,
    pub group_variance: f64,
    pub residual_variance: f64,
    /// `-2` times the restricted log-likelihood at the optimum (constants included).
    pub reml_criterion: f64,
    /// Variance ratio `sigma_b^2 / sigma_e^2` at the optimum.
    pub lambda: f64,
    pub converged: bool,
    /// The boundary `sigma_b^2 = 0` won; estimates are the OLS ones.
    pub singular: bool,
    pub n: usize,
    pub n_groups: usize,
    /// Residual df used for fixed-effect tests (`n - p`).
    pub df_resid: f64,
}

impl MixedFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contrast(&self, weights: &[f64]) -> Estimate {
        linear_combination(&self.coefficients, &self.covariance, weights, self.df_resid)
    }
}

/// Pre-grouped data for repeated criterion evaluations.
pub struct RemlProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    /// Row indices per group.
    groups: Vec<Vec<usize>>,
    names: Vec<String>,
}

struct Evaluation {
    criterion: f64,
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    sigma2: f64,
}

impl RemlProblem {
    pub fn new<G: Eq + Hash + Clone>(y: &[f64], design: &Design, groups: &[G]) -> Result<Self> {
        let n = y.len();
        design.validate(n)?;
        if groups.len() != n {
            return Err(StatsError::LengthMismatch { left: n, right: groups.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let p = design.ncols();
        if n <= p + 1 {
            return Err(StatsError::TooFew { needed: p + 2, got: n });
        }
        let mut index: HashMap<G, usize> = HashMap::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let k = *index.entry(g.clone()).or_insert_with(|| {
                rows.push(Vec::new());
                rows.len() - 1
            });
            rows[k].push(i);
        }
        if rows.len() < 2 {
            return Err(StatsError::Singular(format!("{} group(s); need at least 2", rows.len())));
        }
        let x = design.to_matrix();
        checked_qr(&x, design.names())?;
        Ok(Self { x, y: DVector::from_column_slice(y), groups: rows, names: design.names().to_vec() })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    /// REML criterion at `lambda` (`-2 l_R`, profiled over `sigma_e^2`).
    pub fn criterion(&self, lambda: f64) -> f64 {
        self.evaluate(lambda).map(|e| e.criterion).unwrap_or(f64::INFINITY)
    }

    fn evaluate(&self, lambda: f64) -> Option<Evaluation> {
        let p = self.p();
        let n = self.n();
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        let mut log_det_v = 0.0;
        for rows in &self.groups {
            let ng = rows.len() as f64;
            let c = lambda / (1.0 + lambda * ng);
            log_det_v += (lambda * ng).ln_1p();
            let mut s = DVector::<f64>::zeros(p);
            let mut sy = 0.0;
            for &i in rows {
                let xi = self.x.row(i);
                for j in 0..p {
                    s[j] += xi[j];
                    b[j] += xi[j] * self.y[i];
                    for k in j..p {
                        a[(j, k)] += xi[j] * xi[k];
                    }
                }
                sy += self.y[i];
            }
            for j in 0..p {
                b[j] -= c * s[j] * sy;
                for k in j..p {
                    a[(j, k)] -= c * s[j] * s[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                a[(j, k)] = a[(k, j)];
            }
        }
        let chol = a.cholesky()?;
        let beta = chol.solve(&b);
        let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();

        let resid = &self.y - &self.x * &beta;
        let mut q = 0.0;
        for rows in &self.groups {
            let ng = rows.len() as f64;
            let c = lambda / (1.0 + lambda * ng);
            let mut ss = 0.0;
            let mut sum = 0.0;
            for &i in rows {
                ss += resid[i] * resid[i];
                sum += resid[i];
            }
            q += ss - c * sum * sum;
        }
        let df = (n - p) as f64;
        let q = q.max(QUAD_FLOOR);
        let sigma2 = q / df;
        let criterion =
            df * (2.0 * std::f64::consts::PI * sigma2).ln() + df + log_det_v + log_det_a;
        Some(Evaluation { criterion, beta, a_inv: chol.inverse(), sigma2 })
    }

    fn search(&self) -> (f64, bool) {
        let f = |t: f64| self.criterion(t.exp());
        let step = (LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|k| LOG_LAMBDA_MIN + step * k as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
        let best = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut lo = grid[best.saturating_sub(1)];
        let mut hi = grid[(best + 1).min(GRID_POINTS - 1)];

        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = f(c);
        let mut fd = f(d);
        let mut iter = 0;
        while hi - lo > SEARCH_TOL && iter < GOLDEN_MAX_ITER {
            if fc <= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = f(d);
            }
            iter += 1;
        }
        let converged = hi - lo <= SEARCH_TOL;
        let mut t_best = 0.5 * (lo + hi);
        // the bracket midpoint can only lose to the best grid point through
        // rounding in a flat criterion; keep whichever is lower
        if f(t_best) > values[best] {
            t_best = grid[best];
        }
        (t_best, converged)
    }

    pub fn fit(&self) -> Result<MixedFit> {
        let (log_lambda, converged) = self.search();
        let interior = self
            .evaluate(log_lambda.exp())
            .ok_or_else(|| StatsError::Singular("X' V^-1 X not positive definite".into()))?;
        let boundary = self
            .evaluate(0.0)
            .ok_or_else(|| StatsError::Singular("X' X not positive definite".into()))?;
        let (eval, lambda, singular) = if boundary.criterion <= interior.criterion {
            (boundary, 0.0, true)
        } else {
            (interior, log_lambda.exp(), false)
        };

        let p = self.p();
        let df_resid = (self.n() - p) as f64;
        let covariance: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| eval.sigma2 * eval.a_inv[(i, j)]).collect())
            .collect();
        let coefficients: Vec<f64> = eval.beta.iter().copied().collect();
        let se: Vec<f64> = (0..p).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
        let t: Vec<f64> = coefficients.iter().zip(&se).map(|(b, s)| t_ratio(*b, *s)).collect();
        let pv = t.iter().map(|t| student_t_two_sided(*t, df_resid)).collect();
        Ok(MixedFit {
            names: self.names.clone(),
            coefficients,
            se,
            t,
            p: pv,
            covariance,
            group_variance: lambda * eval.sigma2,
            residual_variance: eval.sigma2,
            reml_criterion: eval.criterion,
            lambda,
            converged: converged || singular,
            singular,
            n: self.n(),
            n_groups: self.groups.len(),
            df_resid,
        })
    }
}

/// Random-intercept model `y = X beta + b_group + e` by profiled REML.
pub fn mixed_random_intercept<G: Eq + Hash + Clone>(
    y: &[f64],
    design: &Design,
    groups: &[G],
) -> Result<MixedFit> {
    let fit = RemlProblem::new(y, design, groups)?.fit()?;
    if !fit.converged {
        return Err(StatsError::NotConverged(format!("golden-section bracket wider than {SEARCH_TOL}")));
    }
    Ok(fit)
}
