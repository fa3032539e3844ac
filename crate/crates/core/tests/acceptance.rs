//! Acceptance gate: one PASS/FAIL/SKIP line per criterion.
//!
//! Every check compares the toolkit against an independent computation
//! (quadrature, normal equations, a plain DP table) or against the ground
//! truth planted by a synthetic generator. Criteria 10 and 11 need the
//! released corpus or a live language model and are skipped unless the
//! corresponding environment variables are set.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dyadkit_core::alignment::{align_stories, direction_contrast, rubber_band_fit, stage_profiles, StoryValences};
use dyadkit_core::corpus::{
    load_transcripts, write_transcripts, Agent, Corpus, Dataset, Genre, Interaction, LoadOptions, Story, Turn,
};
use dyadkit_core::exploration::{exploration_fit, exploration_rows};
use dyadkit_core::infodynamics::{compute_records, resonance_fit};
use dyadkit_core::pipeline::{run_pipeline, Analyses, RunConfig};
use dyadkit_core::preprocess::{filter_by_edit_distance, levenshtein, rectify_corpus};
use dyadkit_core::providers::{
    ByteTokenizer, CorrectorProvider, EchoChat, FixedProbability, HttpClient, HttpSurprisal, HttpTokenizer, LogBase,
    ProviderEndpoint, ProviderResult,
};
use dyadkit_core::simulator::{simulate_dataset, SimConfig};
use dyadkit_core::synthbench::{
    gen_corpus, gen_coupled_dyad, gen_mean_reverting_gaps, gen_resonance_records, gen_walk_stories, CorpusSpec,
    DyadSpec, GapSpec, Leader, ResonanceSpec, SplitMix, WalkMode, WalkStoriesSpec,
};
use dyadkit_stats::special::ln_beta;
use dyadkit_stats::{anova_2x2, fisher_z, mixed_random_intercept, ols, one_sample_t, pearson, Design};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
    /// Reported but never fails the gate.
    Info(String),
}

use Verdict::*;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Verdict,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "statistics match brute-force oracles", budget: Some(secs(5)), run: c1_oracles },
        Criterion { id: 2, name: "mixed-model recovery", budget: Some(secs(30)), run: c2_mixed },
        Criterion { id: 3, name: "directional alignment detection", budget: Some(secs(10)), run: c3_direction },
        Criterion { id: 4, name: "rubber-band recovery", budget: Some(secs(5)), run: c4_rubber_band },
        Criterion { id: 5, name: "exploration slope discrimination", budget: Some(secs(60)), run: c5_exploration },
        Criterion { id: 6, name: "infodynamics exactness", budget: None, run: c6_infodynamics },
        Criterion { id: 7, name: "resonance slope recovery", budget: None, run: c7_resonance },
        Criterion { id: 8, name: "preprocessing", budget: None, run: c8_preprocess },
        Criterion { id: 9, name: "simulator structure", budget: None, run: c9_simulator },
        Criterion { id: 10, name: "released-corpus reproduction", budget: None, run: c10_released_data },
        Criterion { id: 11, name: "surprisal sanity with a live model", budget: None, run: c11_live_surprisal },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let verdict = (c.run)();
        let elapsed = start.elapsed();
        let verdict = match (verdict, c.budget) {
            (Pass(msg), Some(b)) if elapsed > b => Fail(format!("{msg}; took {elapsed:.2?}, budget {b:?}")),
            (v, _) => v,
        };
        let (tag, msg) = match verdict {
            Pass(m) => ("PASS", m),
            Fail(m) => {
                failed += 1;
                ("FAIL", m)
            }
            Skip(m) => ("SKIP", m),
            Info(m) => ("INFO", m),
        };
        println!("{tag} [{:>2}] {} ({:.2?}): {msg}", c.id, c.name, elapsed);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn verdict(ok: bool, msg: String) -> Verdict {
    if ok {
        Pass(msg)
    } else {
        Fail(msg)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

// ---------------------------------------------------------------------------
// 1. oracles

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

const NODES: usize = 20_000;

fn t_density(x: f64, df: f64) -> f64 {
    (-ln_beta(0.5, df / 2.0) - 0.5 * df.ln() - (df + 1.0) / 2.0 * (x * x / df).ln_1p()).exp()
}

fn f_density(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln() - 0.5 * (d1 + d2) * (d1 * x / d2).ln_1p()
        - ln_beta(0.5 * d1, 0.5 * d2))
    .exp()
}

/// `P(X > a)` for a density with a polynomial tail, integrated on `[0, 1)`
/// after mapping `x = a + s / (1 - s)`.
fn upper_tail(density: impl Fn(f64) -> f64, a: f64) -> f64 {
    let g = |s: f64| {
        if s >= 1.0 {
            0.0
        } else {
            let u = 1.0 - s;
            density(a + s / u) / (u * u)
        }
    };
    simpson(g, 0.0, 1.0, NODES)
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    2.0 * upper_tail(|x| t_density(x, df), t.abs())
}

fn f_upper(f: f64, d1: f64, d2: f64) -> f64 {
    if f < 1.0 {
        // x = u^2 turns x^(d1/2 - 1) dx into 2 u^(d1 - 1) du, finite at zero
        let g = |u: f64| {
            let power = if d1 == 1.0 { 0.0 } else { (d1 - 1.0) * u.ln() };
            2.0 * (0.5 * d1 * (d1 / d2).ln() + power - 0.5 * (d1 + d2) * (d1 * u * u / d2).ln_1p()
                - ln_beta(0.5 * d1, 0.5 * d2))
            .exp()
        };
        1.0 - simpson(g, 0.0, f.sqrt(), NODES)
    } else {
        upper_tail(|x| f_density(x, d1, d2), f)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

fn gaussian_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let k = a[row][col] / a[col][col];
                for c in 0..n {
                    a[row][c] -= k * a[col][c];
                }
                for c in 0..b[row].len() {
                    b[row][c] -= k * b[col][c];
                }
            }
        }
    }
    (0..n).map(|i| b[i].iter().map(|v| v / a[i][i]).collect()).collect()
}

struct Worst(f64, String);

impl Worst {
    fn see(&mut self, what: &str, got: f64, want: f64) {
        let e = rel(got, want);
        if !(e <= self.0) {
            self.0 = if e.is_nan() { f64::INFINITY } else { e };
            self.1 = format!("{what}: {got} vs {want}");
        }
    }
}

fn c1_oracles() -> Verdict {
    const TOL: f64 = 1e-8;
    let fixtures = 24;
    let mut worst = Worst(0.0, String::new());
    for seed in 0..fixtures {
        let mut rng = SplitMix::new(1000 + seed);

        // correlation via standardized cross products
        let n = 20 + rng.int_range(0, 30);
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.4 * v + rng.normal()).collect();
        let z = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n as f64;
            let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            v.iter().map(|a| (a - m) / sd).collect::<Vec<_>>()
        };
        let r_oracle = z(&x).iter().zip(z(&y)).map(|(a, b)| a * b).sum::<f64>() / (n as f64 - 1.0);
        let r = pearson(&x, &y).unwrap();
        worst.see("pearson", r, r_oracle);
        worst.see("fisher_z", fisher_z(r).unwrap(), 0.5 * ((1.0 + r) / (1.0 - r)).ln());

        // one-sample t
        let m = 6 + rng.int_range(0, 30);
        let xs: Vec<f64> = (0..m).map(|_| rng.normal_with(0.3, 1.0)).collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let sd = (xs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0)).sqrt();
        let t_oracle = mean / (sd / (m as f64).sqrt());
        let tt = one_sample_t(&xs, 0.0).unwrap();
        worst.see("t", tt.t, t_oracle);
        worst.see("t p-value", tt.p_two_sided, t_two_sided(t_oracle, m as f64 - 1.0));

        // balanced 2x2 ANOVA by explicit decomposition
        let per = 4 + rng.int_range(0, 8);
        let (mut vals, mut fa, mut fb) = (Vec::new(), Vec::new(), Vec::new());
        for a in 0..2 {
            for b in 0..2 {
                for _ in 0..per {
                    vals.push(0.4 * a as f64 - 0.3 * b as f64 + 0.2 * (a * b) as f64 + rng.normal());
                    fa.push(a);
                    fb.push(b);
                }
            }
        }
        let mean_of = |pred: &dyn Fn(usize) -> bool| {
            let sel: Vec<f64> = (0..vals.len()).filter(|&i| pred(i)).map(|i| vals[i]).collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        let grand = mean_of(&|_| true);
        let a_mean = [mean_of(&|i| fa[i] == 0), mean_of(&|i| fa[i] == 1)];
        let b_mean = [mean_of(&|i| fb[i] == 0), mean_of(&|i| fb[i] == 1)];
        let mut cell = [[0.0; 2]; 2];
        for (a, row) in cell.iter_mut().enumerate() {
            for (b, c) in row.iter_mut().enumerate() {
                *c = mean_of(&|i| fa[i] == a && fb[i] == b);
            }
        }
        let (mut ss_a, mut ss_b, mut ss_cells, mut ss_res) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..vals.len() {
            ss_a += (a_mean[fa[i]] - grand).powi(2);
            ss_b += (b_mean[fb[i]] - grand).powi(2);
            ss_cells += (cell[fa[i]][fb[i]] - grand).powi(2);
            ss_res += (vals[i] - cell[fa[i]][fb[i]]).powi(2);
        }
        let ss_ab = ss_cells - ss_a - ss_b;
        let df_res = vals.len() as f64 - 4.0;
        let table = anova_2x2(&vals, &fa, &fb, ["a", "b"]).unwrap();
        worst.see("anova residual ss", table.residual_ss, ss_res);
        for (name, ss) in [("a", ss_a), ("b", ss_b), ("a:b", ss_ab)] {
            let e = table.effect(name).unwrap();
            let f = ss / (ss_res / df_res);
            worst.see(&format!("anova {name} ss"), e.ss, ss);
            worst.see(&format!("anova {name} F"), e.f, f);
            worst.see(&format!("anova {name} p"), e.p, f_upper(f, 1.0, df_res));
        }

        // OLS by normal equations
        let n = 30 + rng.int_range(0, 30);
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
        let y: Vec<f64> =
            (0..n).map(|i| 1.0 + 0.5 * cols[0][i] - 0.8 * cols[1][i] + 0.3 * cols[2][i] + rng.normal()).collect();
        let rows: Vec<[f64; 4]> = (0..n).map(|i| [1.0, cols[0][i], cols[1][i], cols[2][i]]).collect();
        let xtx: Vec<Vec<f64>> =
            (0..4).map(|j| (0..4).map(|k| rows.iter().map(|r| r[j] * r[k]).sum()).collect()).collect();
        let xty: Vec<Vec<f64>> = (0..4).map(|j| vec![rows.iter().zip(&y).map(|(r, v)| r[j] * v).sum()]).collect();
        let beta: Vec<f64> = gaussian_solve(xtx.clone(), xty).into_iter().map(|r| r[0]).collect();
        let identity: Vec<Vec<f64>> = (0..4).map(|j| (0..4).map(|k| f64::from(u8::from(j == k))).collect()).collect();
        let inv = gaussian_solve(xtx, identity);
        let rss: f64 = rows.iter().zip(&y).map(|(r, v)| (v - (0..4).map(|j| r[j] * beta[j]).sum::<f64>()).powi(2)).sum();
        let df = n as f64 - 4.0;
        let s2 = rss / df;
        let design = Design::new()
            .intercept(n)
            .column("x1", cols[0].clone())
            .column("x2", cols[1].clone())
            .column("x3", cols[2].clone());
        let fit = ols(&y, &design).unwrap();
        for j in 0..4 {
            let se = (s2 * inv[j][j]).sqrt();
            worst.see(&format!("ols b{j}"), fit.coefficients[j], beta[j]);
            worst.see(&format!("ols se{j}"), fit.se[j], se);
            worst.see(&format!("ols p{j}"), fit.p[j], t_two_sided(beta[j] / se, df));
        }
    }
    let msg = format!("{fixtures} fixtures, worst relative error {:.2e} ({})", worst.0, worst.1);
    verdict(worst.0 <= TOL, msg)
}

// ---------------------------------------------------------------------------
// 2. mixed model

fn c2_mixed() -> Verdict {
    const GROUPS: usize = 40;
    const PER: usize = 25;
    let truth = [1.0, 0.5, -0.3];
    let mut est: Vec<Vec<f64>> = vec![Vec::new(); 3];
    let mut worst_ols: f64 = 0.0;
    let mut not_singular = 0;
    for seed in 0..20u64 {
        let mut rng = SplitMix::new(7_000 + seed);
        let n = GROUPS * PER;
        let groups: Vec<usize> = (0..n).map(|i| i / PER).collect();
        // both covariates vary within groups, like bin size and agent in
        // the analysis models
        let b: Vec<f64> = (0..GROUPS).map(|_| 0.3 * rng.normal()).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let design = Design::new().intercept(n).column("x", x.clone()).column("z", z.clone());
        let y: Vec<f64> =
            (0..n).map(|i| truth[0] + truth[1] * x[i] + truth[2] * z[i] + b[groups[i]] + e[i]).collect();
        let fit = mixed_random_intercept(&y, &design, &groups).unwrap();
        for k in 0..3 {
            est[k].push(fit.coefficients[k]);
        }

        // no between-group signal at all: every group's noise is centred
        let mut e0 = e.clone();
        for g in 0..GROUPS {
            let m = e[g * PER..(g + 1) * PER].iter().sum::<f64>() / PER as f64;
            e0[g * PER..(g + 1) * PER].iter_mut().for_each(|v| *v -= m);
        }
        let y0: Vec<f64> = (0..n).map(|i| truth[0] + truth[1] * x[i] + truth[2] * z[i] + e0[i]).collect();
        let mixed = mixed_random_intercept(&y0, &design, &groups).unwrap();
        let plain = ols(&y0, &design).unwrap();
        not_singular += usize::from(!(mixed.singular && mixed.group_variance == 0.0));
        for k in 0..3 {
            worst_ols = worst_ols.max((mixed.coefficients[k] - plain.coefficients[k]).abs());
        }
    }
    let medians: Vec<f64> = est.into_iter().map(median).collect();
    let off: Vec<f64> = medians.iter().zip(truth).map(|(m, t)| (m - t).abs()).collect();
    let ok = off.iter().all(|&d| d <= 0.05) && worst_ols <= 1e-6 && not_singular == 0;
    verdict(
        ok,
        format!(
            "median estimates {medians:.4?} vs truth {truth:?} (max off {:.4}); zero-variance case: {} non-singular fits, max |mixed - ols| {worst_ols:.1e}",
            off.iter().cloned().fold(0.0, f64::max),
            not_singular
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. direction

fn contrast(kappa: f64, seed: u64) -> dyadkit_stats::TTestResult {
    let rows = gen_coupled_dyad(&DyadSpec::new(27, 50, kappa, 1.0, Leader::User), seed);
    let (results, _) = align_stories(&StoryValences::from_rows(&rows));
    direction_contrast(&results, Dataset::Field).unwrap()
}

fn c3_direction() -> Verdict {
    let coupled = contrast(0.8, 3);
    let null_ok = (0..20).filter(|&s| contrast(0.0, 100 + s).p_two_sided > 0.05).count();
    let ok = coupled.mean > 0.0 && coupled.p_two_sided < 0.01 && null_ok >= 18;
    verdict(
        ok,
        format!(
            "kappa 0.8: within - across = {:.3}, t({}) = {:.2}, p = {:.2e}; kappa 0: p > .05 in {null_ok}/20",
            coupled.mean, coupled.df, coupled.t, coupled.p_two_sided
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. rubber band

fn rubber_band_beta(beta1: f64, seed: u64) -> f64 {
    let rows = gen_mean_reverting_gaps(&GapSpec::new(500, beta1, 0.2), seed);
    let (profiles, excluded) = stage_profiles(&rows);
    assert!(excluded.is_empty());
    let fit = rubber_band_fit(&profiles).unwrap();
    fit.coefficients[fit.names.iter().position(|n| n == "delta12").unwrap()]
}

fn c4_rubber_band() -> Verdict {
    let b = rubber_band_beta(-0.7, 4);
    let null = rubber_band_beta(0.0, 5);
    verdict(
        (-0.75..=-0.65).contains(&b) && null.abs() < 0.1,
        format!("beta1 = {b:.4} (truth -0.7), null beta1 = {null:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 5. exploration

fn c5_exploration() -> Verdict {
    let spec = |mode, dataset| WalkStoriesSpec { n_stories: 27, n_turns: 60, dim: 16, sigma: 1.0, origin_sd: 1.0, mode, dataset };
    let mut positive = 0;
    let mut inter = Vec::new();
    for seed in 0..50u64 {
        let mut stories = gen_walk_stories(&spec(WalkMode::Walk, Dataset::Field), 2 * seed);
        stories.extend(gen_walk_stories(&spec(WalkMode::Iid, Dataset::Simulated), 2 * seed + 1));
        let rows = exploration_rows(&stories, None).unwrap();
        let fit = exploration_fit(&rows).unwrap();
        positive += usize::from(fit.interaction.estimate > 0.0);
        inter.push(fit.interaction.estimate);
    }
    verdict(positive >= 45, format!("interaction positive in {positive}/50 seeds, median {:.4}", median(inter)))
}

// ---------------------------------------------------------------------------
// 6. infodynamics

fn c6_infodynamics() -> Verdict {
    const W: usize = 32;
    let corpus = gen_corpus(&CorpusSpec { n_stories: 12, min_sessions: 2, max_sessions: 4, ..CorpusSpec::default() }, 66);
    let mut problems = Vec::new();
    let mut measured = 0;
    let mut excluded = 0;
    for p in [1.0f64, 0.9, 0.5, 0.1, 1e-6] {
        for base in [LogBase::E, LogBase::Two] {
            let want = -p.log2();
            let recs = compute_records(&corpus, &ByteTokenizer, &FixedProbability::with_base(p, base), W, 4).unwrap();
            for story in &corpus.stories {
                // token spans straight from the byte lengths
                let lens: Vec<usize> = story.turns().map(|t| t.text.len()).collect();
                let total: usize = lens.iter().sum();
                let mut start = 0;
                let mut expect_out = BTreeSet::new();
                for (i, len) in lens.iter().enumerate() {
                    if start < W || start + len + W > total {
                        expect_out.insert(i);
                    }
                    start += len;
                }
                let mine: Vec<_> = recs.iter().filter(|r| r.story_id == story.story_id).collect();
                if mine.len() != lens.len() {
                    problems.push(format!("{}: {} records for {} turns", story.story_id, mine.len(), lens.len()));
                    continue;
                }
                let got_out: BTreeSet<usize> = mine.iter().filter(|r| r.boundary_excluded).map(|r| r.turn_index).collect();
                if got_out != expect_out {
                    problems.push(format!("{}: excluded {got_out:?}, expected {expect_out:?}", story.story_id));
                }
                // the excluded segments form a prefix and a suffix
                let first_in = (0..lens.len()).find(|i| !expect_out.contains(i));
                if let Some(f) = first_in {
                    let last_in = (0..lens.len()).rev().find(|i| !expect_out.contains(i)).unwrap();
                    if (f..=last_in).any(|i| expect_out.contains(&i)) {
                        problems.push(format!("{}: interior exclusion", story.story_id));
                    }
                }
                for r in mine {
                    if r.n_tokens != lens[r.turn_index] {
                        problems.push(format!("{} turn {}: n_tokens", r.story_id, r.turn_index));
                    }
                    match (r.novelty_bits, r.transience_bits, r.resonance_bits) {
                        (Some(n), Some(t), Some(res)) => {
                            measured += 1;
                            let tol = 1e-12 * want.max(1.0);
                            if (n - want).abs() > tol || (t - want).abs() > tol {
                                problems.push(format!("p={p}: novelty {n}, transience {t}, want {want}"));
                            }
                            if res != n - t {
                                problems.push(format!("resonance {res} != {n} - {t}"));
                            }
                        }
                        (None, None, None) => excluded += 1,
                        _ => problems.push(format!("{} turn {}: partial metrics", r.story_id, r.turn_index)),
                    }
                }
            }
        }
    }
    problems.truncate(3);
    verdict(
        problems.is_empty() && measured > 0 && excluded > 0,
        format!("{measured} measured and {excluded} excluded records checked; {problems:?}"),
    )
}

// ---------------------------------------------------------------------------
// 7. resonance

fn c7_resonance() -> Verdict {
    let (bu, ba) = (0.973, 0.842);
    let recs = gen_resonance_records(&ResonanceSpec::new(2000, bu, ba, 0.5), 7);
    let fit = resonance_fit(&recs).unwrap();
    let (su, sa, si) = (fit.slope_user.estimate, fit.slope_ai.estimate, fit.interaction.estimate);
    let ok = (su - bu).abs() <= 0.03 && (sa - ba).abs() <= 0.03 && (si - (ba - bu)).abs() <= 0.05;
    verdict(
        ok,
        format!(
            "user {su:.4} (truth {bu}), ai {sa:.4} (truth {ba}), interaction {si:.4} (truth {:.3})",
            ba - bu
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. preprocessing

fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Rewrites every `x` as `y`, so a turn's edit distance is its count of `x`.
struct XCorrector;

impl CorrectorProvider for XCorrector {
    fn correct(&self, text: &str) -> ProviderResult<String> {
        Ok(text.replace('x', "y"))
    }
}

const FIXTURE_INTERACTIONS: usize = 3230;
const FIXTURE_STORIES: usize = 27;
const PLANTED: usize = 54;

/// 27 stories, sessions of ten interactions; planted user turns need at
/// least 100 edits, all others at most 99.
fn noisy_fixture() -> (Corpus, BTreeSet<(String, usize)>) {
    let mut rng = SplitMix::new(3230);
    let mut planted = BTreeSet::new();
    while planted.len() < PLANTED {
        planted.insert(rng.int_range(0, FIXTURE_INTERACTIONS - 1));
    }
    let alphabet: Vec<char> = "abcdefghijklmnoprstuvæøå ".chars().collect();
    let mut stories = Vec::new();
    let mut global = 0;
    let mut planted_keys = BTreeSet::new();
    for s in 0..FIXTURE_STORIES {
        let n = FIXTURE_INTERACTIONS / FIXTURE_STORIES + usize::from(s < FIXTURE_INTERACTIONS % FIXTURE_STORIES);
        let story_id = format!("story{s:02}");
        let mut interactions = Vec::with_capacity(n);
        for i in 0..n {
            let session = format!("{story_id}-p{:02}", i / 10);
            let xs = if planted.contains(&global) {
                planted_keys.insert((story_id.clone(), i));
                if global % 3 == 0 { 100 } else { rng.int_range(101, 300) }
            } else if global % 50 == 0 {
                99
            } else {
                rng.int_range(0, 60)
            };
            let words: String = (0..rng.int_range(20, 60)).map(|_| alphabet[rng.int_range(0, alphabet.len() - 1)]).collect();
            let user = format!("Dragen {words} {}", "x".repeat(xs));
            interactions.push(Interaction {
                interaction_index: i,
                user_turn: Turn::new(&story_id, &session, 2 * i, Agent::User, user),
                ai_turn: Turn::new(&story_id, &session, 2 * i + 1, Agent::Ai, format!("Og så skete der {i} ting.")),
            });
            global += 1;
        }
        stories.push(Story::new(story_id, Dataset::Field, Genre::Fantasy, interactions));
    }
    (Corpus::new(Dataset::Field, stories).unwrap(), planted_keys)
}

fn c8_preprocess() -> Verdict {
    let mut rng = SplitMix::new(88);
    let alphabet: Vec<char> = "abcæøå ÅÆØ.".chars().collect();
    let word = |rng: &mut SplitMix| -> String {
        let n = rng.int_range(0, 25);
        (0..n).map(|_| alphabet[rng.int_range(0, alphabet.len() - 1)]).collect()
    };
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        mismatches += usize::from(levenshtein(&a, &b) != dp_levenshtein(&a, &b));
    }

    let (corpus, planted) = noisy_fixture();
    let before = corpus.interaction_count();
    let rectified = rectify_corpus(&corpus, &XCorrector, 4).unwrap();
    let filtered = filter_by_edit_distance(&corpus, &rectified, 100).unwrap();
    let after = filtered.corpus.interaction_count();
    let dropped: BTreeSet<(String, usize)> =
        filtered.log.excluded.iter().map(|e| (e.story_id.clone(), e.interaction_index)).collect();
    let ok = mismatches == 0 && before == FIXTURE_INTERACTIONS && after == 3176 && dropped == planted;
    verdict(
        ok,
        format!(
            "levenshtein mismatches {mismatches}/1000; filter kept {after} of {before}, dropped {} (planted {PLANTED}, exact match: {})",
            dropped.len(),
            dropped == planted
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. simulator

fn shape(c: &Corpus) -> Vec<(String, Vec<(String, usize, usize)>)> {
    c.stories
        .iter()
        .map(|s| (s.story_id.clone(), s.sessions.iter().map(|x| (x.session_id.clone(), x.start, x.length)).collect()))
        .collect()
}

fn c9_simulator() -> Verdict {
    let mut fixtures = vec![noisy_fixture().0];
    for seed in 0..4 {
        fixtures.push(gen_corpus(&CorpusSpec { n_stories: 6, max_sessions: 5, ..CorpusSpec::default() }, seed));
    }
    let serial = SimConfig { parallelism: 1, ..SimConfig::default() };
    let parallel = SimConfig { parallelism: 8, ..SimConfig::default() };
    let mut problems = Vec::new();
    for (k, field) in fixtures.iter().enumerate() {
        let a = simulate_dataset(field, &EchoChat, &serial).unwrap();
        let b = simulate_dataset(field, &EchoChat, &parallel).unwrap();
        if shape(&a.corpus) != shape(field) || a.corpus.interaction_count() != field.interaction_count() {
            problems.push(format!("fixture {k}: structure differs"));
        }
        if a.corpus.dataset != Dataset::Simulated {
            problems.push(format!("fixture {k}: dataset tag"));
        }
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_transcripts(&a.corpus, &mut ba).unwrap();
        write_transcripts(&b.corpus, &mut bb).unwrap();
        if ba != bb {
            problems.push(format!("fixture {k}: bytes differ between runs"));
        }
    }
    verdict(
        problems.is_empty(),
        format!("{} fixtures (largest {} interactions) isomorphic and byte-stable; {problems:?}", fixtures.len(), fixtures[0].interaction_count()),
    )
}

// ---------------------------------------------------------------------------
// 10, 11. optional, need outside resources

fn c10_released_data() -> Verdict {
    let Ok(config) = std::env::var("DYADKIT_DATA_CONFIG") else {
        return Skip("set DYADKIT_DATA_CONFIG to a run config naming the released field and simulated corpora".into());
    };
    let mut cfg = match RunConfig::load(&PathBuf::from(config)) {
        Ok(c) => c,
        Err(e) => return Fail(format!("config: {e}")),
    };
    let out = tempfile::tempdir().unwrap();
    cfg.out_dir = out.path().to_path_buf();
    cfg.analyses = Analyses { figures: false, ..Analyses::only_alignment() };
    if let Err(e) = run_pipeline(&cfg) {
        return Fail(format!("pipeline: {e}"));
    }
    let read = |name: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(out.path().join("alignment").join(name)).unwrap()).unwrap()
    };
    let tests = read("tests.json");
    let bands = read("rubber_band.json");
    let t_sim = tests["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["dataset"] == "simulated" && c["direction"] == "user_to_ai")
        .and_then(|c| c["test"]["ok"]["t"].as_f64());
    let f = |name: &str| {
        tests["anova"]["effects"].as_array()?.iter().find(|e| e["name"] == name).and_then(|e| e["f"].as_f64())
    };
    let beta = bands
        .as_array()
        .unwrap()
        .iter()
        .find(|b| b[0] == "field")
        .and_then(|b| {
            let fit = &b[1]["ok"];
            let i = fit["names"].as_array()?.iter().position(|n| n == "delta12")?;
            fit["coefficients"][i].as_f64()
        });
    let within = |v: Option<f64>, target: f64, tol: f64| v.is_some_and(|v| (v - target).abs() <= tol);
    let ok = within(t_sim, 9.03, 0.5)
        && within(f("dataset"), 20.99, 0.15 * 20.99)
        && within(f("turn"), 26.67, 0.15 * 26.67)
        && within(beta, -0.68, 0.05);
    let msg = format!(
        "t(sim user->ai) = {t_sim:?} (9.03), F dataset = {:?} (20.99), F turn = {:?} (26.67), field beta1 = {beta:?} (-0.68)",
        f("dataset"),
        f("turn")
    );
    // lexicon parity with the original scoring is not guaranteed, so a
    // mismatch is reported rather than failed
    if ok {
        Pass(msg)
    } else {
        Info(format!("deviates: {msg}"))
    }
}

fn c11_live_surprisal() -> Verdict {
    let (Ok(url), Ok(path)) = (std::env::var("DYADKIT_SURPRISAL_URL"), std::env::var("DYADKIT_SURPRISAL_CORPUS")) else {
        return Skip("set DYADKIT_SURPRISAL_URL and DYADKIT_SURPRISAL_CORPUS to run against a live model".into());
    };
    let tok_url = std::env::var("DYADKIT_TOKENIZER_URL").unwrap_or_else(|_| url.clone());
    let client = |u: &str| HttpClient::new(ProviderEndpoint::new(u)).map_err(|e| format!("endpoint {u}: {e}"));
    let (tok, lm) = match (client(&tok_url), client(&url)) {
        (Ok(t), Ok(l)) => (HttpTokenizer(t), HttpSurprisal(l)),
        (Err(e), _) | (_, Err(e)) => return Fail(e),
    };
    let corpus = match load_transcripts(&PathBuf::from(path), Dataset::Field, LoadOptions::default()) {
        Ok(c) => c,
        Err(e) => return Fail(format!("corpus: {e}")),
    };
    let recs = match compute_records(&corpus, &tok, &lm, 128, 4) {
        Ok(r) => r,
        Err(e) => return Fail(format!("surprisal: {e}")),
    };
    let nov: Vec<f64> = recs.iter().filter_map(|r| r.novelty_bits).collect();
    if nov.is_empty() {
        return Fail("no segment had a full context window".into());
    }
    let mean = nov.iter().sum::<f64>() / nov.len() as f64;
    verdict((4.0..=9.0).contains(&mean), format!("mean novelty {mean:.3} bits over {} segments", nov.len()))
}
