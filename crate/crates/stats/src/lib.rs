//! Statistics used by the dyadic interaction analyses.
//!
//! Everything here is a pure function of its inputs: Pearson correlation and
//! the Fisher transform, one-sample/paired/Welch t-tests, balanced 2x2
//! ANOVA, OLS and a single random-intercept mixed model fitted by REML.

pub mod anova;
pub mod correlation;
pub mod design;
pub mod error;
pub mod mixed;
pub mod ols;
pub mod special;
pub mod ttest;

pub use anova::{anova_2x2, AnovaEffect, AnovaTable};
pub use correlation::{clamp_r, fisher_z, pearson, R_CLAMP_EPS};
pub use design::{Design, Estimate};
pub use error::{Result, StatsError};
pub use mixed::{mixed_random_intercept, MixedFit, RemlProblem};
pub use ols::{ols, RegressionFit};
pub use ttest::{one_sample_t, paired_t, welch_t, TTestResult};
