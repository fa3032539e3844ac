//! SVG figures for the analysis tables.
//!
//! Plain hand-written SVG with a fixed layout so output is diffable and the
//! coordinates can be checked against golden files. Every data-bearing
//! element carries a `class` (`series`, `point`, `box`, `median`, `whisker`,
//! `fit`, `mean`) so tests can find them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::alignment::{AlignmentResult, Direction, StageProfile, Volume};
use crate::corpus::{Agent, Dataset};
use crate::exploration::{BinRow, ExplorationFit};
use crate::infodynamics::{ResonanceFit, SurprisalRecord};
use crate::sentiment::ValenceGap;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to plot in the {0} table")]
    EmptyTable(&'static str),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const MARGIN_LEFT: f64 = 60.0;
pub const MARGIN_RIGHT: f64 = 20.0;
pub const MARGIN_TOP: f64 = 30.0;
pub const MARGIN_BOTTOM: f64 = 50.0;
/// Fraction of the data span added on each side of an axis.
pub const PAD: f64 = 0.05;

const FIELD_COLOR: &str = "#1f77b4";
const SIM_COLOR: &str = "#d62728";
const LONG_COLOR: &str = "#2ca02c";
const SHORT_COLOR: &str = "#ff7f0e";

fn dataset_color(d: Dataset) -> &'static str {
    match d {
        Dataset::Field => FIELD_COLOR,
        Dataset::Simulated => SIM_COLOR,
    }
}

/// A straight line `y = intercept + slope * x` drawn over the x range.
#[derive(Debug, Clone, PartialEq)]
pub struct FitLine {
    pub label: String,
    pub intercept: f64,
    pub slope: f64,
}

impl FitLine {
    pub fn exploration(fit: &ExplorationFit) -> [FitLine; 2] {
        let c = &fit.model.coefficients;
        [
            FitLine { label: "simulated".into(), intercept: c[0], slope: c[1] },
            FitLine { label: "field".into(), intercept: c[0] + c[2], slope: c[1] + c[3] },
        ]
    }

    pub fn resonance(fit: &ResonanceFit) -> [FitLine; 2] {
        let c = &fit.model.coefficients;
        [
            FitLine { label: "user".into(), intercept: c[0], slope: c[1] },
            FitLine { label: "ai".into(), intercept: c[0] + c[2], slope: c[1] + c[3] },
        ]
    }
}

/// Linear data-to-pixel mapping for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
    pub px_lo: f64,
    pub px_hi: f64,
}

impl Scale {
    /// Data range padded by [`PAD`]; a degenerate range becomes `v ± 1`.
    pub fn fit(values: impl IntoIterator<Item = f64>, px_lo: f64, px_hi: f64) -> Scale {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi == lo {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        } else {
            let pad = (hi - lo) * PAD;
            (lo, hi) = (lo - pad, hi + pad);
        }
        Scale { lo, hi, px_lo, px_hi }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn x_scale(values: impl IntoIterator<Item = f64>) -> Scale {
    Scale::fit(values, MARGIN_LEFT, WIDTH - MARGIN_RIGHT)
}

// y grows downwards in SVG.
fn y_scale(values: impl IntoIterator<Item = f64>) -> Scale {
    Scale::fit(values, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str, x_label: &str, y_label: &str, xs: &Scale, ys: &Scale) -> Svg {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(body, r#"<title>{}</title>"#, escape(title));
        let _ = writeln!(body, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let (x0, x1, y0, y1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
        let _ = writeln!(body, r#"<path class="axis" d="M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}" stroke="black" fill="none"/>"#);
        let _ = writeln!(body, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, MARGIN_TOP - 10.0, escape(title));
        let _ = writeln!(body, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 10.0, escape(x_label));
        let _ = writeln!(
            body,
            r#"<text x="15" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        for (v, anchor_x) in [(xs.lo, x0), (xs.hi, x1)] {
            let _ = writeln!(body, r#"<text class="tick" x="{anchor_x:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#, y0 + 15.0, tick(v));
        }
        for (v, anchor_y) in [(ys.lo, y0), (ys.hi, y1)] {
            let _ = writeln!(body, r#"<text class="tick" x="{:.2}" y="{anchor_y:.2}" text-anchor="end" font-size="10">{}</text>"#, x0 - 5.0, tick(v));
        }
        Svg { body }
    }

    fn polyline(&mut self, class: &str, pts: &[(f64, f64)], color: &str, extra: &str) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{x:.2} {y:.2}", if i == 0 { "M" } else { " L" });
        }
        let _ = writeln!(self.body, r#"<path class="{class}" d="{d}" stroke="{color}" fill="none"{extra}/>"#);
    }

    fn circle(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(self.body, r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}" fill-opacity="0.5"/>"#);
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = MARGIN_TOP + 12.0 + 14.0 * i as f64;
            let x = WIDTH - MARGIN_RIGHT - 110.0;
            let _ = writeln!(self.body, r#"<rect class="legend" x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
            let _ = writeln!(self.body, r#"<text x="{:.2}" y="{y:.2}" font-size="10">{}</text>"#, x + 14.0, escape(label));
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tick(v: f64) -> String {
    format!("{v:.3}")
}

/// Per-story valence trajectories: user turns solid, AI turns dashed.
pub fn valence_svg(rows: &[ValenceGap]) -> Result<String> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTable("valence"));
    }
    let xs = x_scale(rows.iter().map(|r| r.interaction_index as f64));
    let ys = y_scale(rows.iter().flat_map(|r| [r.user, r.ai]));
    let mut svg = Svg::new("Valence per story", "interaction", "valence", &xs, &ys);
    let mut keys: Vec<(Dataset, &str)> = rows.iter().map(|r| (r.dataset, r.story_id.as_str())).collect();
    keys.sort();
    keys.dedup();
    for (d, story) in keys {
        let mut story_rows: Vec<&ValenceGap> = rows.iter().filter(|r| r.dataset == d && r.story_id == story).collect();
        story_rows.sort_by_key(|r| r.interaction_index);
        for (agent, dash) in [("user", ""), ("ai", r#" stroke-dasharray="4 2""#)] {
            let pts: Vec<(f64, f64)> = story_rows
                .iter()
                .map(|r| (xs.map(r.interaction_index as f64), ys.map(if agent == "user" { r.user } else { r.ai })))
                .collect();
            let extra = format!(r#" data-story="{}" data-agent="{agent}"{dash}"#, escape(story));
            svg.polyline("series", &pts, dataset_color(d), &extra);
        }
    }
    svg.legend(&[("field", FIELD_COLOR), ("simulated", SIM_COLOR)]);
    Ok(svg.finish())
}

/// Quartiles by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One box per (dataset, direction) present; whiskers span min to max.
pub fn alignment_svg(results: &[AlignmentResult]) -> Result<String> {
    if results.is_empty() {
        return Err(ReportError::EmptyTable("alignment"));
    }
    let mut cells = Vec::new();
    for d in [Dataset::Field, Dataset::Simulated] {
        for dir in Direction::BOTH {
            let mut z: Vec<f64> =
                results.iter().filter(|r| r.dataset == d && r.direction == dir).map(|r| r.fisher_z).collect();
            if !z.is_empty() {
                z.sort_by(f64::total_cmp);
                cells.push((d, dir, z));
            }
        }
    }
    let xs = Scale { lo: 0.0, hi: cells.len() as f64, px_lo: MARGIN_LEFT, px_hi: WIDTH - MARGIN_RIGHT };
    let ys = y_scale(results.iter().map(|r| r.fisher_z));
    let mut svg = Svg::new("Alignment by condition", "condition", "Fisher z", &xs, &ys);
    let half = 0.3 * (xs.map(1.0) - xs.map(0.0));
    for (i, (d, dir, z)) in cells.iter().enumerate() {
        let cx = xs.map(i as f64 + 0.5);
        let (q1, med, q3) = (quantile(z, 0.25), quantile(z, 0.5), quantile(z, 0.75));
        let (lo, hi) = (z[0], z[z.len() - 1]);
        let color = dataset_color(*d);
        let label = format!("{} {}", d.as_str(), dir.as_str());
        svg.polyline("whisker", &[(cx, ys.map(lo)), (cx, ys.map(q1))], color, "");
        svg.polyline("whisker", &[(cx, ys.map(q3)), (cx, ys.map(hi))], color, "");
        let _ = writeln!(
            svg.body,
            r#"<rect class="box" data-condition="{}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#,
            escape(&label),
            cx - half,
            ys.map(q3),
            2.0 * half,
            ys.map(q1) - ys.map(q3)
        );
        svg.polyline("median", &[(cx - half, ys.map(med)), (cx + half, ys.map(med))], color, "");
        let _ = writeln!(
            svg.body,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 28.0,
            escape(&label)
        );
    }
    Ok(svg.finish())
}

/// Gap at the three stages for every session, coloured by volume, with the
/// mean profile of each volume group on top.
pub fn stages_svg(profiles: &[StageProfile]) -> Result<String> {
    if profiles.is_empty() {
        return Err(ReportError::EmptyTable("stages"));
    }
    let xs = x_scale([1.0, 3.0]);
    let ys = y_scale(profiles.iter().flat_map(|p| [p.g1, p.g2, p.g3]));
    let mut svg = Svg::new("Valence gap by stage", "stage", "valence gap", &xs, &ys);
    let color = |v: Volume| if v == Volume::Long { LONG_COLOR } else { SHORT_COLOR };
    for p in profiles {
        let pts: Vec<(f64, f64)> =
            [p.g1, p.g2, p.g3].iter().enumerate().map(|(k, &g)| (xs.map(k as f64 + 1.0), ys.map(g))).collect();
        let extra = format!(r#" data-session="{}" stroke-opacity="0.4""#, escape(&p.session_id));
        svg.polyline("series", &pts, color(p.volume), &extra);
    }
    for v in [Volume::Long, Volume::Short] {
        let group: Vec<&StageProfile> = profiles.iter().filter(|p| p.volume == v).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let mean = [
            group.iter().map(|p| p.g1).sum::<f64>() / n,
            group.iter().map(|p| p.g2).sum::<f64>() / n,
            group.iter().map(|p| p.g3).sum::<f64>() / n,
        ];
        let pts: Vec<(f64, f64)> = mean.iter().enumerate().map(|(k, &g)| (xs.map(k as f64 + 1.0), ys.map(g))).collect();
        svg.polyline("mean", &pts, color(v), r#" stroke-width="3""#);
    }
    svg.legend(&[("longer sessions", LONG_COLOR), ("shorter sessions", SHORT_COLOR)]);
    Ok(svg.finish())
}

fn fit_segment(svg: &mut Svg, xs: &Scale, ys: &Scale, x_range: (f64, f64), line: &FitLine, color: &str) {
    let pts = [x_range.0, x_range.1].map(|x| (xs.map(x), ys.map(line.intercept + line.slope * x)));
    let extra = format!(r#" data-label="{}" data-slope="{}" stroke-width="2""#, escape(&line.label), line.slope);
    svg.polyline("fit", &pts, color, &extra);
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Log centroid distance against bin size, with the fitted line per dataset
/// (simulated first, field second) when given.
pub fn exploration_svg(rows: &[BinRow], fit: Option<&[FitLine; 2]>) -> Result<String> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTable("exploration"));
    }
    let xr = min_max(rows.iter().map(|r| r.bin_size as f64));
    let mut yv: Vec<f64> = rows.iter().map(|r| r.log_distance).collect();
    if let Some(lines) = fit {
        for l in lines {
            yv.extend([l.intercept + l.slope * xr.0, l.intercept + l.slope * xr.1]);
        }
    }
    let xs = x_scale([xr.0, xr.1]);
    let ys = y_scale(yv);
    let mut svg = Svg::new("Semantic exploration", "bin size", "log centroid distance", &xs, &ys);
    for r in rows {
        svg.circle(xs.map(r.bin_size as f64), ys.map(r.log_distance), dataset_color(r.dataset));
    }
    if let Some([sim, field]) = fit {
        fit_segment(&mut svg, &xs, &ys, xr, sim, SIM_COLOR);
        fit_segment(&mut svg, &xs, &ys, xr, field, FIELD_COLOR);
    }
    svg.legend(&[("field", FIELD_COLOR), ("simulated", SIM_COLOR)]);
    Ok(svg.finish())
}

/// Resonance against novelty by agent, with the fitted line per agent (user
/// first, AI second) when given. Boundary-excluded records are skipped.
pub fn resonance_svg(records: &[SurprisalRecord], fit: Option<&[FitLine; 2]>) -> Result<String> {
    let pts: Vec<(Agent, f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.agent, r.novelty_bits?, r.resonance_bits?)))
        .collect();
    if pts.is_empty() {
        return Err(ReportError::EmptyTable("infodynamics"));
    }
    let color = |a: Agent| if a == Agent::User { FIELD_COLOR } else { SIM_COLOR };
    let xr = min_max(pts.iter().map(|p| p.1));
    let mut yv: Vec<f64> = pts.iter().map(|p| p.2).collect();
    if let Some(lines) = fit {
        for l in lines {
            yv.extend([l.intercept + l.slope * xr.0, l.intercept + l.slope * xr.1]);
        }
    }
    let xs = x_scale([xr.0, xr.1]);
    let ys = y_scale(yv);
    let mut svg = Svg::new("Novelty and resonance", "novelty (bits)", "resonance (bits)", &xs, &ys);
    for (a, n, r) in &pts {
        svg.circle(xs.map(*n), ys.map(*r), color(*a));
    }
    if let Some([user, ai]) = fit {
        fit_segment(&mut svg, &xs, &ys, xr, user, color(Agent::User));
        fit_segment(&mut svg, &xs, &ys, xr, ai, color(Agent::Ai));
    }
    svg.legend(&[("user", color(Agent::User)), ("ai", color(Agent::Ai))]);
    Ok(svg.finish())
}

/// Whatever analysis output is available; `None` figures are not drawn.
#[derive(Debug, Clone, Default)]
pub struct FigureTables {
    pub valence: Option<Vec<ValenceGap>>,
    pub alignment: Option<Vec<AlignmentResult>>,
    pub stages: Option<Vec<StageProfile>>,
    pub exploration: Option<(Vec<BinRow>, Option<[FitLine; 2]>)>,
    pub resonance: Option<(Vec<SurprisalRecord>, Option<[FitLine; 2]>)>,
}

/// Renders every present table into `out` and returns the written paths in
/// a fixed order. Nothing is written if any present table is empty.
pub fn emit_figures(tables: &FigureTables, out: &Path) -> Result<Vec<PathBuf>> {
    let mut rendered: Vec<(&str, String)> = Vec::new();
    if let Some(rows) = &tables.valence {
        rendered.push(("valence.svg", valence_svg(rows)?));
    }
    if let Some(rows) = &tables.alignment {
        rendered.push(("alignment_fisher_z.svg", alignment_svg(rows)?));
    }
    if let Some(rows) = &tables.stages {
        rendered.push(("stages.svg", stages_svg(rows)?));
    }
    if let Some((rows, fit)) = &tables.exploration {
        rendered.push(("exploration.svg", exploration_svg(rows, fit.as_ref())?));
    }
    if let Some((rows, fit)) = &tables.resonance {
        rendered.push(("resonance.svg", resonance_svg(rows, fit.as_ref())?));
    }
    fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(rendered.len());
    for (name, svg) in rendered {
        let p = out.join(name);
        fs::write(&p, svg)?;
        paths.push(p);
    }
    Ok(paths)
}
