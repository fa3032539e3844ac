//! Directional affective alignment between the two agents of a story, and
//! the participant-level "rubber band" analysis of valence-gap stages.
//!
//! Two pairings are correlated per story: the user turn with the AI reply in
//! the same interaction (`UserToAi`), and each AI reply with the next user
//! turn (`AiToUser`). The latter crosses session boundaries, since a new
//! participant continues the same story.

use std::collections::BTreeMap;
use std::io::Write;

use dyadkit_stats::{
    anova_2x2, clamp_r, fisher_z, ols, one_sample_t, paired_t, pearson, AnovaTable, Design, RegressionFit, StatsError,
    TTestResult,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Story, TurnKey};
use crate::sentiment::{ValenceGap, Valences};

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("story {story_id}: {direction:?} needs {needed} pairs, has {got}")]
    InsufficientPairs { story_id: String, direction: Direction, needed: usize, got: usize },
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("session {session_id} has {length} interactions; at least 3 are needed")]
    TooShort { session_id: String, length: usize },
    #[error("no alignment results for dataset {dataset}, direction {direction:?}")]
    EmptyCell { dataset: Dataset, direction: Direction },
    #[error("no valence for turn {0:?}")]
    MissingValence(TurnKey),
    #[error("{0}")]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, AlignmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// user_i with ai_i
    UserToAi,
    /// ai_i with user_{i+1}
    AiToUser,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::UserToAi, Direction::AiToUser];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::UserToAi => "user_to_ai",
            Direction::AiToUser => "ai_to_user",
        }
    }
}

/// Per-interaction valences of one story, in interaction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryValences {
    pub story_id: String,
    pub dataset: Dataset,
    pub session_ids: Vec<String>,
    pub user: Vec<f64>,
    pub ai: Vec<f64>,
}

impl StoryValences {
    pub fn from_story(story: &Story, valences: &Valences) -> Result<Self> {
        let get = |k: TurnKey| valences.get(&k).map(|v| v.value).ok_or(AlignmentError::MissingValence(k));
        let mut out = Self {
            story_id: story.story_id.clone(),
            dataset: story.dataset,
            session_ids: Vec::with_capacity(story.len()),
            user: Vec::with_capacity(story.len()),
            ai: Vec::with_capacity(story.len()),
        };
        for inter in &story.interactions {
            out.session_ids.push(inter.session_id().to_string());
            out.user.push(get(inter.user_turn.key())?);
            out.ai.push(get(inter.ai_turn.key())?);
        }
        Ok(out)
    }

    /// Groups table rows by (dataset, story), ordering by interaction index.
    pub fn from_rows(rows: &[ValenceGap]) -> Vec<Self> {
        let mut by_story: BTreeMap<(Dataset, &str), Vec<&ValenceGap>> = BTreeMap::new();
        for r in rows {
            by_story.entry((r.dataset, r.story_id.as_str())).or_default().push(r);
        }
        by_story
            .into_iter()
            .map(|((dataset, story_id), mut rs)| {
                rs.sort_by_key(|r| r.interaction_index);
                Self {
                    story_id: story_id.to_string(),
                    dataset,
                    session_ids: rs.iter().map(|r| r.session_id.clone()).collect(),
                    user: rs.iter().map(|r| r.user).collect(),
                    ai: rs.iter().map(|r| r.ai).collect(),
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub story_id: String,
    pub dataset: Dataset,
    pub direction: Direction,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn directional_series(story: &StoryValences, direction: Direction) -> Result<PairedSeries> {
    let n = story.len();
    let (needed, x, y) = match direction {
        Direction::UserToAi => (1, story.user.clone(), story.ai.clone()),
        Direction::AiToUser => (
            2,
            story.ai[..n.saturating_sub(1)].to_vec(),
            story.user.get(1..).map(<[f64]>::to_vec).unwrap_or_default(),
        ),
    };
    if n < needed {
        return Err(AlignmentError::InsufficientPairs { story_id: story.story_id.clone(), direction, needed, got: x.len() });
    }
    Ok(PairedSeries { story_id: story.story_id.clone(), dataset: story.dataset, direction, x, y })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub story_id: String,
    pub dataset: Dataset,
    pub direction: Direction,
    pub n_pairs: usize,
    pub r: f64,
    pub fisher_z: f64,
}

pub fn story_alignment(series: &PairedSeries) -> Result<AlignmentResult> {
    let n = series.x.len();
    if n < 3 {
        return Err(AlignmentError::InsufficientPairs {
            story_id: series.story_id.clone(),
            direction: series.direction,
            needed: 3,
            got: n,
        });
    }
    let r = pearson(&series.x, &series.y).map_err(|e| match e {
        StatsError::ZeroVariance(which) => AlignmentError::ZeroVariance(format!(
            "story {} {}: {which} series is constant",
            series.story_id,
            series.direction.as_str()
        )),
        other => other.into(),
    })?;
    Ok(AlignmentResult {
        story_id: series.story_id.clone(),
        dataset: series.dataset,
        direction: series.direction,
        n_pairs: n,
        r,
        fisher_z: fisher_z(clamp_r(r))?,
    })
}

/// A story left out of the alignment table, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStory {
    pub story_id: String,
    pub dataset: Dataset,
    pub direction: Direction,
    pub reason: String,
}

/// Both directions for every story. Stories that are too short or constant
/// in a direction are reported rather than failing the batch.
pub fn align_stories(stories: &[StoryValences]) -> (Vec<AlignmentResult>, Vec<SkippedStory>) {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for s in stories {
        for dir in Direction::BOTH {
            match directional_series(s, dir).and_then(|ser| story_alignment(&ser)) {
                Ok(r) => results.push(r),
                Err(e) => skipped.push(SkippedStory {
                    story_id: s.story_id.clone(),
                    dataset: s.dataset,
                    direction: dir,
                    reason: e.to_string(),
                }),
            }
        }
    }
    (results, skipped)
}

pub fn alignment_ttest(zs: &[f64], mu0: f64) -> Result<TTestResult> {
    one_sample_t(zs, mu0).map_err(|e| match e {
        StatsError::ZeroVariance(_) => AlignmentError::ZeroVariance("fisher z scores are constant".into()),
        other => other.into(),
    })
}

fn select(results: &[AlignmentResult], dataset: Dataset, direction: Direction) -> Vec<&AlignmentResult> {
    results.iter().filter(|r| r.dataset == dataset && r.direction == direction).collect()
}

/// Dataset x Turn ANOVA on story-level z. Levels: FIELD = 0, SIMULATED = 1;
/// within (user-to-AI) = 0, across (AI-to-user) = 1.
pub fn alignment_anova(results: &[AlignmentResult]) -> Result<AnovaTable> {
    for dataset in [Dataset::Field, Dataset::Simulated] {
        for direction in Direction::BOTH {
            if select(results, dataset, direction).is_empty() {
                return Err(AlignmentError::EmptyCell { dataset, direction });
            }
        }
    }
    let values: Vec<f64> = results.iter().map(|r| r.fisher_z).collect();
    let a: Vec<usize> = results.iter().map(|r| usize::from(r.dataset == Dataset::Simulated)).collect();
    let b: Vec<usize> = results.iter().map(|r| usize::from(r.direction == Direction::AiToUser)).collect();
    if values.iter().all(|&v| v == values[0]) {
        return Err(AlignmentError::ZeroVariance("all fisher z scores are equal".into()));
    }
    Ok(anova_2x2(&values, &a, &b, ["dataset", "turn"])?)
}

/// Results of the stories present in all four dataset x direction cells,
/// plus the ids left out. Simulated stories mirror field story ids, so this
/// keeps the ANOVA balanced when a story is too short or flat in one cell.
pub fn complete_cases(results: &[AlignmentResult]) -> (Vec<AlignmentResult>, Vec<String>) {
    let mut cells: BTreeMap<&str, usize> = BTreeMap::new();
    for r in results {
        *cells.entry(r.story_id.as_str()).or_default() += 1;
    }
    let keep = |id: &str| cells.get(id) == Some(&4);
    let dropped = cells.keys().filter(|id| !keep(id)).map(|id| id.to_string()).collect();
    (results.iter().filter(|r| keep(&r.story_id)).cloned().collect(), dropped)
}

/// Paired t-test of within- minus across-interaction z over the stories of
/// one dataset that have both directions.
pub fn direction_contrast(results: &[AlignmentResult], dataset: Dataset) -> Result<TTestResult> {
    let across: BTreeMap<&str, f64> = select(results, dataset, Direction::AiToUser)
        .into_iter()
        .map(|r| (r.story_id.as_str(), r.fisher_z))
        .collect();
    let (within, across): (Vec<f64>, Vec<f64>) = select(results, dataset, Direction::UserToAi)
        .into_iter()
        .filter_map(|r| across.get(r.story_id.as_str()).map(|&z| (r.fisher_z, z)))
        .unzip();
    paired_t(&within, &across).map_err(|e| match e {
        StatsError::ZeroVariance(_) => AlignmentError::ZeroVariance("direction differences are constant".into()),
        other => other.into(),
    })
}

/// Stage sizes for a session of length `n`: as equal as possible, with the
/// remainder going to the earliest stages (7 -> 3/2/2, 8 -> 3/3/2).
pub fn stage_sizes(n: usize) -> [usize; 3] {
    let (base, rem) = (n / 3, n % 3);
    [0, 1, 2].map(|k| base + usize::from(k < rem))
}

/// Mean gap in the early, middle and late thirds of a session.
pub fn stage_split(session_id: &str, gaps: &[f64]) -> Result<[f64; 3]> {
    if gaps.len() < 3 {
        return Err(AlignmentError::TooShort { session_id: session_id.to_string(), length: gaps.len() });
    }
    let mut out = [0.0; 3];
    let mut start = 0;
    for (k, size) in stage_sizes(gaps.len()).into_iter().enumerate() {
        out[k] = gaps[start..start + size].iter().sum::<f64>() / size as f64;
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Volume {
    Long,
    Short,
}

impl Volume {
    pub fn as_str(self) -> &'static str {
        match self {
            Volume::Long => "LONG",
            Volume::Short => "SHORT",
        }
    }

    pub fn indicator(self) -> f64 {
        match self {
            Volume::Long => 1.0,
            Volume::Short => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub session_id: String,
    pub story_id: String,
    pub dataset: Dataset,
    pub length: usize,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub delta12: f64,
    pub delta23: f64,
    pub volume: Volume,
}

impl StageProfile {
    pub fn new(session_id: &str, story_id: &str, dataset: Dataset, length: usize, g: [f64; 3], volume: Volume) -> Self {
        Self {
            session_id: session_id.to_string(),
            story_id: story_id.to_string(),
            dataset,
            length,
            g1: g[0],
            g2: g[1],
            g3: g[2],
            delta12: g[1] - g[0],
            delta23: g[2] - g[1],
            volume,
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Session-level stage profiles from interaction rows. Sessions shorter than
/// three interactions are returned separately. `volume` is LONG when the
/// session is strictly longer than the median length of the included
/// sessions of its dataset.
pub fn stage_profiles(rows: &[ValenceGap]) -> (Vec<StageProfile>, Vec<AlignmentError>) {
    let mut sessions: BTreeMap<(Dataset, &str, &str), Vec<&ValenceGap>> = BTreeMap::new();
    for r in rows {
        sessions.entry((r.dataset, r.story_id.as_str(), r.session_id.as_str())).or_default().push(r);
    }
    let mut staged = Vec::new();
    let mut excluded = Vec::new();
    for ((dataset, story_id, session_id), mut rs) in sessions {
        rs.sort_by_key(|r| r.interaction_index);
        let gaps: Vec<f64> = rs.iter().map(|r| r.gap).collect();
        match stage_split(session_id, &gaps) {
            Ok(g) => staged.push((dataset, story_id, session_id, gaps.len(), g)),
            Err(e) => excluded.push(e),
        }
    }
    let mut medians = BTreeMap::new();
    for &(dataset, _, _, len, _) in &staged {
        medians.entry(dataset).or_insert_with(Vec::new).push(len as f64);
    }
    let medians: BTreeMap<Dataset, f64> = medians.into_iter().map(|(d, mut v)| (d, median(&mut v))).collect();
    let profiles = staged
        .into_iter()
        .map(|(dataset, story_id, session_id, len, g)| {
            let volume = if len as f64 > medians[&dataset] { Volume::Long } else { Volume::Short };
            StageProfile::new(session_id, story_id, dataset, len, g, volume)
        })
        .collect();
    (profiles, excluded)
}

/// OLS of `delta23 ~ delta12 + volume + delta12:volume` (volume: LONG = 1).
pub fn rubber_band_fit(profiles: &[StageProfile]) -> Result<RegressionFit> {
    if profiles.len() < 5 {
        return Err(StatsError::TooFew { needed: 5, got: profiles.len() }.into());
    }
    let d12: Vec<f64> = profiles.iter().map(|p| p.delta12).collect();
    let first = d12[0];
    if d12.iter().all(|&d| d == first) {
        return Err(AlignmentError::ZeroVariance("delta12 is constant".into()));
    }
    let vol: Vec<f64> = profiles.iter().map(|p| p.volume.indicator()).collect();
    let inter: Vec<f64> = d12.iter().zip(&vol).map(|(d, v)| d * v).collect();
    let y: Vec<f64> = profiles.iter().map(|p| p.delta23).collect();
    let design = Design::new()
        .intercept(y.len())
        .column("delta12", d12)
        .column("volume", vol)
        .column("delta12:volume", inter);
    Ok(ols(&y, &design)?)
}

pub fn write_alignment_csv<W: Write>(results: &[AlignmentResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["story_id", "dataset", "direction", "n_pairs", "r", "z"])?;
    for r in results {
        w.write_record([
            r.story_id.clone(),
            r.dataset.as_str().to_string(),
            r.direction.as_str().to_string(),
            r.n_pairs.to_string(),
            r.r.to_string(),
            r.fisher_z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stages_csv<W: Write>(profiles: &[StageProfile], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["session_id", "g1", "g2", "g3", "delta12", "delta23", "volume", "dataset", "story_id", "length"])?;
    for p in profiles {
        w.write_record([
            p.session_id.clone(),
            p.g1.to_string(),
            p.g2.to_string(),
            p.g3.to_string(),
            p.delta12.to_string(),
            p.delta23.to_string(),
            p.volume.as_str().to_string(),
            p.dataset.as_str().to_string(),
            p.story_id.clone(),
            p.length.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
