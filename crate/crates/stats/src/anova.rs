//! Balanced two-way (2x2) factorial ANOVA.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StatsError};
use crate::special::f_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaEffect {
    pub name: String,
    pub ss: f64,
    pub df: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    /// Main effect of A, main effect of B, then the A:B interaction.
    pub effects: Vec<AnovaEffect>,
    pub residual_ss: f64,
    pub residual_df: f64,
    pub total_ss: f64,
    /// Set when the residual sum of squares is zero; F is then `inf` for
    /// effects with positive SS and 0 otherwise.
    pub degenerate_residual: bool,
}

impl AnovaTable {
    pub fn effect(&self, name: &str) -> Option<&AnovaEffect> {
        self.effects.iter().find(|e| e.name == name)
    }
}

/// Two-way ANOVA with factor levels coded 0/1. The design must be balanced.
///
/// Effects are named `names[0]`, `names[1]` and `"{a}:{b}"`.
pub fn anova_2x2(values: &[f64], a: &[usize], b: &[usize], names: [&str; 2]) -> Result<AnovaTable> {
    if values.len() != a.len() {
        return Err(StatsError::LengthMismatch { left: values.len(), right: a.len() });
    }
    if values.len() != b.len() {
        return Err(StatsError::LengthMismatch { left: values.len(), right: b.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for ((&v, &i), &j) in values.iter().zip(a).zip(b) {
        if i > 1 {
            return Err(StatsError::InvalidLevel(i));
        }
        if j > 1 {
            return Err(StatsError::InvalidLevel(j));
        }
        sums[i][j] += v;
        counts[i][j] += 1;
    }
    for i in 0..2 {
        for j in 0..2 {
            if counts[i][j] == 0 {
                return Err(StatsError::EmptyCell(i, j));
            }
        }
    }
    let m = counts[0][0];
    if counts.iter().flatten().any(|&c| c != m) {
        return Err(StatsError::Unbalanced([counts[0][0], counts[0][1], counts[1][0], counts[1][1]]));
    }
    let n = values.len();
    if n < 5 {
        return Err(StatsError::TooFew { needed: 5, got: n });
    }

    let mf = m as f64;
    let cell = |i: usize, j: usize| sums[i][j] / mf;
    let grand = values.iter().sum::<f64>() / n as f64;
    let row = |i: usize| (cell(i, 0) + cell(i, 1)) / 2.0;
    let col = |j: usize| (cell(0, j) + cell(1, j)) / 2.0;

    let ss_a: f64 = (0..2).map(|i| 2.0 * mf * (row(i) - grand).powi(2)).sum();
    let ss_b: f64 = (0..2).map(|j| 2.0 * mf * (col(j) - grand).powi(2)).sum();
    let mut ss_ab = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            ss_ab += mf * (cell(i, j) - row(i) - col(j) + grand).powi(2);
        }
    }
    let ss_res: f64 = values
        .iter()
        .zip(a)
        .zip(b)
        .map(|((v, &i), &j)| (v - cell(i, j)).powi(2))
        .sum();
    let total_ss: f64 = values.iter().map(|v| (v - grand).powi(2)).sum();

    let residual_df = (n - 4) as f64;
    let ms_res = ss_res / residual_df;
    let degenerate_residual = ss_res == 0.0;
    let make = |name: String, ss: f64| {
        let f = if degenerate_residual {
            if ss > 0.0 { f64::INFINITY } else { 0.0 }
        } else {
            ss / ms_res
        };
        AnovaEffect { name, ss, df: 1.0, f, p: f_sf(f, 1.0, residual_df) }
    };
    Ok(AnovaTable {
        effects: vec![
            make(names[0].to_string(), ss_a),
            make(names[1].to_string(), ss_b),
            make(format!("{}:{}", names[0], names[1]), ss_ab),
        ],
        residual_ss: ss_res,
        residual_df,
        total_ss,
        degenerate_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(cells: [[&[f64]; 2]; 2]) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
        let mut v = vec![];
        let mut a = vec![];
        let mut b = vec![];
        for i in 0..2 {
            for j in 0..2 {
                for &x in cells[i][j] {
                    v.push(x);
                    a.push(i);
                    b.push(j);
                }
            }
        }
        (v, a, b)
    }

    #[test]
    fn pure_a_effect_without_noise() {
        let (v, a, b) = layout([[&[0.0, 0.0], &[0.0, 0.0]], [&[1.0, 1.0], &[1.0, 1.0]]]);
        let t = anova_2x2(&v, &a, &b, ["A", "B"]).unwrap();
        assert!(t.degenerate_residual);
        assert_eq!(t.effects[0].f, f64::INFINITY);
        assert_eq!(t.effects[1].f, 0.0);
        assert_eq!(t.effects[2].f, 0.0);
        assert!((t.effects[0].ss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_values_give_zero_ss() {
        let (v, a, b) = layout([[&[3.0, 3.0], &[3.0, 3.0]], [&[3.0, 3.0], &[3.0, 3.0]]]);
        let t = anova_2x2(&v, &a, &b, ["A", "B"]).unwrap();
        assert!(t.effects.iter().all(|e| e.ss == 0.0));
        assert_eq!(t.total_ss, 0.0);
    }

    #[test]
    fn hand_decomposition() {
        // cell means: 1, 3 / 2, 6 ; within-cell deviations +-1
        let (v, a, b) = layout([[&[0.0, 2.0], &[2.0, 4.0]], [&[1.0, 3.0], &[5.0, 7.0]]]);
        let t = anova_2x2(&v, &a, &b, ["A", "B"]).unwrap();
        // grand 3; rows 2, 4 -> SS_A = 4 * (1 + 1) = 8; cols 1.5, 4.5 -> SS_B = 4 * 2.25 * 2 = 18
        // interaction residuals: 1-2-1.5+3 = 0.5 -> each cell +-0.5 -> SS_AB = 2 * 4 * 0.25 = 2
        assert!((t.effects[0].ss - 8.0).abs() < 1e-12);
        assert!((t.effects[1].ss - 18.0).abs() < 1e-12);
        assert!((t.effects[2].ss - 2.0).abs() < 1e-12);
        assert!((t.residual_ss - 8.0).abs() < 1e-12);
        assert_eq!(t.residual_df, 4.0);
        assert!((t.effects[0].f - 4.0).abs() < 1e-12);
        assert_eq!(t.effects[2].name, "A:B");
    }

    #[test]
    fn rejects_bad_layouts() {
        let (v, a, b) = layout([[&[0.0, 2.0], &[2.0]], [&[1.0, 3.0], &[5.0, 7.0]]]);
        assert!(matches!(anova_2x2(&v, &a, &b, ["A", "B"]), Err(StatsError::Unbalanced(_))));
        let (v, a, b) = layout([[&[0.0, 2.0], &[]], [&[1.0, 3.0], &[5.0, 7.0]]]);
        assert_eq!(anova_2x2(&v, &a, &b, ["A", "B"]), Err(StatsError::EmptyCell(0, 1)));
    }
}
