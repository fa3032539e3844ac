use nalgebra::DMatrix;

use crate::error::{Result, StatsError};

/// Named design matrix, stored by column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Design {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n: Option<usize>,
}

impl Design {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an all-ones column of length `n` named `(Intercept)`.
    pub fn intercept(self, n: usize) -> Self {
        self.column("(Intercept)", vec![1.0; n])
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.n.get_or_insert(values.len());
        self.names.push(name.into());
        self.columns.push(values);
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn nrows(&self) -> usize {
        self.n.unwrap_or(0)
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub(crate) fn validate(&self, n_obs: usize) -> Result<()> {
        for c in &self.columns {
            if c.len() != n_obs {
                return Err(StatsError::LengthMismatch { left: n_obs, right: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite);
            }
        }
        Ok(())
    }

    pub(crate) fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.nrows();
        DMatrix::from_fn(n, self.ncols(), |i, j| self.columns[j][i])
    }
}

/// Estimate of a linear combination of coefficients.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

pub(crate) fn t_ratio(est: f64, se: f64) -> f64 {
    if se > 0.0 {
        est / se
    } else if est == 0.0 {
        0.0
    } else {
        est.signum() * f64::INFINITY
    }
}
