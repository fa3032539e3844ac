//! Semantic exploration: how far consecutive windows of user turns move in
//! embedding space, as a function of window (bin) size.
//!
//! User-turn vectors are z-scored per dimension over the whole dataset, cut
//! into non-overlapping bins, and averaged. The cosine distance between each
//! pair of consecutive bin centroids gives one row. A slow decay of the
//! log distance with bin size means the story keeps moving rather than
//! circling one point.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use dyadkit_stats::{mixed_random_intercept, Design, Estimate, MixedFit, StatsError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dataset, Turn, TurnKey};
use crate::providers::{EmbeddingProvider, ProviderError};

pub const LOG_EPS: f64 = 1e-12;
pub const MAX_DEFAULT_BIN: usize = 15;

#[derive(Debug, Error)]
pub enum ExplorationError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("embedding dimension drifted from {expected} to {found} at turn {key:?}")]
    DimensionDrift { expected: usize, found: usize, key: TurnKey },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("turn {0:?} has empty text")]
    EmptyText(TurnKey),
    #[error("need at least 2 vectors to standardize, got {0}")]
    TooFewVectors(usize),
    #[error("no embedding for turn {0:?}")]
    MissingEmbedding(TurnKey),
    #[error("dataset {dataset} has {got} stories with rows; at least 2 are needed")]
    TooFewStories { dataset: Dataset, got: usize },
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{0}")]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, ExplorationError>;

pub type Embeddings = BTreeMap<TurnKey, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub story_id: String,
    pub turn_index: usize,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn key(&self) -> TurnKey {
        TurnKey { story_id: self.story_id.clone(), turn_index: self.turn_index }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Embeds turns in batches of `batch_size`, at most `parallelism` batches in
/// flight. Output order follows input order.
pub fn embed_turns(
    turns: &[&Turn],
    provider: &dyn EmbeddingProvider,
    batch_size: usize,
    parallelism: usize,
) -> Result<Vec<EmbeddingVector>> {
    if let Some(t) = turns.iter().find(|t| t.text.is_empty()) {
        return Err(ExplorationError::EmptyText(t.key()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ExplorationError::Pool(e.to_string()))?;
    let batches: Vec<&[&Turn]> = turns.chunks(batch_size.max(1)).collect();
    let vectors: Vec<Vec<Vec<f64>>> = pool.install(|| {
        batches
            .par_iter()
            .map(|batch| {
                let texts: Vec<String> = batch.iter().map(|t| t.text.clone()).collect();
                let out = provider.embed(&texts)?;
                if out.len() != texts.len() {
                    return Err(ProviderError::Protocol(format!(
                        "asked for {} vectors, got {}",
                        texts.len(),
                        out.len()
                    )));
                }
                Ok(out)
            })
            .collect::<std::result::Result<_, ProviderError>>()
    })?;
    let mut dim = None;
    let mut result = Vec::with_capacity(turns.len());
    for (turn, values) in turns.iter().zip(vectors.into_iter().flatten()) {
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(ExplorationError::DimensionDrift { expected, found: values.len(), key: turn.key() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Protocol(format!("non-finite embedding for {:?}", turn.key())).into());
        }
        result.push(EmbeddingVector { story_id: turn.story_id.clone(), turn_index: turn.turn_index, values });
    }
    Ok(result)
}

pub fn to_map(vectors: Vec<EmbeddingVector>) -> Embeddings {
    vectors.into_iter().map(|v| (v.key(), v.values)).collect()
}

/// Reads precomputed vectors: one JSON object per line with `story_id`,
/// `turn_index` and `values`.
pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    let mut out = Embeddings::new();
    let mut dim = None;
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: EmbeddingVector = serde_json::from_str(&line)
            .map_err(|e| ExplorationError::Format { line: i + 1, message: e.to_string() })?;
        let expected = *dim.get_or_insert(v.dim());
        if v.dim() != expected {
            return Err(ExplorationError::DimensionDrift { expected, found: v.dim(), key: v.key() });
        }
        out.insert(v.key(), v.values);
    }
    Ok(out)
}

pub fn write_embeddings<W: Write>(embeddings: &Embeddings, mut out: W) -> Result<()> {
    for (k, values) in embeddings {
        let v = EmbeddingVector { story_id: k.story_id.clone(), turn_index: k.turn_index, values: values.clone() };
        serde_json::to_writer(&mut out, &v).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ExplorationError::DimensionMismatch(u.len(), v.len()));
    }
    let nu2 = dot(u, u);
    let nv2 = dot(v, v);
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(ExplorationError::ZeroVector);
    }
    if u == v {
        return Ok(0.0);
    }
    Ok((1.0 - dot(u, v) / (nu2 * nv2).sqrt()).clamp(0.0, 2.0))
}

/// Distance between two centroids. Centroids can legitimately be zero after
/// standardization; identical centroids are at distance 0 and a zero centroid
/// is otherwise treated as orthogonal to everything (distance 1).
pub fn centroid_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ExplorationError::DimensionMismatch(u.len(), v.len()));
    }
    if u == v {
        return Ok(0.0);
    }
    match cosine_distance(u, v) {
        Err(ExplorationError::ZeroVector) => Ok(1.0),
        other => other,
    }
}

/// Per-dimension mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let n = vectors.len();
        if n < 2 {
            return Err(ExplorationError::TooFewVectors(n));
        }
        let dim = vectors[0].as_ref().len();
        let mut mean = vec![0.0; dim];
        for v in vectors {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(ExplorationError::DimensionMismatch(dim, v.len()));
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in ss.iter_mut().zip(v.as_ref()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let sd = ss.into_iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((x, m), s)| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }
}

pub fn standardize<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<Vec<f64>>> {
    let s = Standardizer::fit(vectors)?;
    Ok(vectors.iter().map(|v| s.apply(v.as_ref())).collect())
}

/// Means of consecutive non-overlapping windows; a short trailing window is
/// dropped.
pub fn bin_centroids<V: AsRef<[f64]>>(vectors: &[V], bin_size: usize) -> Vec<Vec<f64>> {
    assert!(bin_size >= 1, "bin_size must be at least 1");
    vectors
        .chunks_exact(bin_size)
        .map(|bin| {
            let mut c = vec![0.0; bin[0].as_ref().len()];
            for v in bin {
                for (a, x) in c.iter_mut().zip(v.as_ref()) {
                    *a += x;
                }
            }
            c.iter_mut().for_each(|a| *a /= bin_size as f64);
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub story_id: String,
    pub dataset: Dataset,
    pub bin_size: usize,
    pub pair_index: usize,
    pub distance: f64,
    pub log_distance: f64,
}

/// `1..=min(max_user_turns / 2, 15)`.
pub fn default_bin_sizes(max_user_turns: usize) -> Vec<usize> {
    (1..=(max_user_turns / 2).min(MAX_DEFAULT_BIN)).collect()
}

/// Rows for one story from its (already standardized) user vectors.
pub fn centroid_distance_rows<V: AsRef<[f64]>>(
    story_id: &str,
    dataset: Dataset,
    vectors: &[V],
    bin_sizes: &[usize],
) -> Result<Vec<BinRow>> {
    let mut rows = Vec::new();
    for &b in bin_sizes {
        let cents = bin_centroids(vectors, b);
        for (k, pair) in cents.windows(2).enumerate() {
            let d = centroid_distance(&pair[0], &pair[1])?;
            rows.push(BinRow {
                story_id: story_id.to_string(),
                dataset,
                bin_size: b,
                pair_index: k,
                distance: d,
                log_distance: d.max(LOG_EPS).ln(),
            });
        }
    }
    Ok(rows)
}

/// User-turn vectors of one story, in turn order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryVectors {
    pub story_id: String,
    pub dataset: Dataset,
    pub vectors: Vec<Vec<f64>>,
}

pub fn story_vectors(corpus: &Corpus, embeddings: &Embeddings) -> Result<Vec<StoryVectors>> {
    corpus
        .stories
        .iter()
        .map(|s| {
            let vectors = s
                .user_turns()
                .map(|t| embeddings.get(&t.key()).cloned().ok_or_else(|| ExplorationError::MissingEmbedding(t.key())))
                .collect::<Result<_>>()?;
            Ok(StoryVectors { story_id: s.story_id.clone(), dataset: s.dataset, vectors })
        })
        .collect()
}

/// Standardizes per dataset, then computes rows for every story. With
/// `bin_sizes = None` the default range is derived from the longest story.
pub fn exploration_rows(stories: &[StoryVectors], bin_sizes: Option<&[usize]>) -> Result<Vec<BinRow>> {
    let default;
    let sizes = match bin_sizes {
        Some(s) => s,
        None => {
            default = default_bin_sizes(stories.iter().map(|s| s.vectors.len()).max().unwrap_or(0));
            &default
        }
    };
    let datasets: HashSet<Dataset> = stories.iter().map(|s| s.dataset).collect();
    let mut scalers = BTreeMap::new();
    for d in datasets {
        let all: Vec<&Vec<f64>> = stories.iter().filter(|s| s.dataset == d).flat_map(|s| &s.vectors).collect();
        scalers.insert(d, Standardizer::fit(&all)?);
    }
    let per_story: Vec<Vec<BinRow>> = stories
        .par_iter()
        .map(|s| {
            let z: Vec<Vec<f64>> = s.vectors.iter().map(|v| scalers[&s.dataset].apply(v)).collect();
            centroid_distance_rows(&s.story_id, s.dataset, &z, sizes)
        })
        .collect::<Result<_>>()?;
    Ok(per_story.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationFit {
    pub model: MixedFit,
    /// Bin-size slope in the simulated (reference) dataset.
    pub slope_simulated: Estimate,
    pub slope_field: Estimate,
    /// Field slope minus simulated slope.
    pub interaction: Estimate,
}

/// `log_distance ~ bin_size * is_field + (1 | story)`, with SIMULATED as the
/// reference level.
pub fn exploration_fit(rows: &[BinRow]) -> Result<ExplorationFit> {
    for d in [Dataset::Field, Dataset::Simulated] {
        let stories: HashSet<&str> = rows.iter().filter(|r| r.dataset == d).map(|r| r.story_id.as_str()).collect();
        if stories.len() < 2 {
            return Err(ExplorationError::TooFewStories { dataset: d, got: stories.len() });
        }
    }
    let y: Vec<f64> = rows.iter().map(|r| r.log_distance).collect();
    let bin: Vec<f64> = rows.iter().map(|r| r.bin_size as f64).collect();
    let field: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.dataset == Dataset::Field))).collect();
    let inter: Vec<f64> = bin.iter().zip(&field).map(|(b, f)| b * f).collect();
    let groups: Vec<(Dataset, &str)> = rows.iter().map(|r| (r.dataset, r.story_id.as_str())).collect();
    let design = Design::new()
        .intercept(y.len())
        .column("bin_size", bin)
        .column("field", field)
        .column("bin_size:field", inter);
    let model = mixed_random_intercept(&y, &design, &groups)?;
    if model.singular {
        log::warn!("exploration model: no between-story variance, fixed effects are the OLS fit");
    }
    Ok(ExplorationFit {
        slope_simulated: model.contrast(&[0.0, 1.0, 0.0, 0.0]),
        slope_field: model.contrast(&[0.0, 1.0, 0.0, 1.0]),
        interaction: model.contrast(&[0.0, 0.0, 0.0, 1.0]),
        model,
    })
}

pub fn write_rows_csv<W: Write>(rows: &[BinRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["story_id", "dataset", "bin_size", "pair_index", "distance", "log_distance"])?;
    for r in rows {
        w.write_record([
            r.story_id.clone(),
            r.dataset.as_str().to_string(),
            r.bin_size.to_string(),
            r.pair_index.to_string(),
            r.distance.to_string(),
            r.log_distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Agent;
    use crate::providers::{Capabilities, HashOneHotEmbedder, ProviderResult};
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), 2.0);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(ExplorationError::ZeroVector)));
        assert!(matches!(cosine_distance(&[1.0], &[1.0, 0.0]), Err(ExplorationError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn standardize_examples() {
        let z = standardize(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (got, want) in z.concat().iter().zip([-h, -h, h, h]) {
            assert!((got - want).abs() < 1e-15);
        }
        let c = standardize(&[vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 4.0]]).unwrap();
        assert!(c.iter().all(|v| v[0] == 0.0));
        let again = standardize(&c).unwrap();
        for (a, b) in again.concat().iter().zip(c.concat()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(standardize(&[vec![1.0]]), Err(ExplorationError::TooFewVectors(1))));
    }

    #[test]
    fn binning() {
        let v: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        assert_eq!(bin_centroids(&v, 1), v);
        let c = bin_centroids(&v, 2);
        assert_eq!(c, vec![vec![0.5, 1.0], vec![2.5, 1.0]]);
        let same = vec![vec![1.0, 2.0]; 4];
        let rows = centroid_distance_rows("s", Dataset::Field, &same, &[2]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].distance, 0.0);
        assert_eq!(rows[0].log_distance, LOG_EPS.ln());
    }

    #[test]
    fn row_counts() {
        let v: Vec<Vec<f64>> = (0..4).map(|i| vec![(i as f64).cos(), (i as f64).sin()]).collect();
        let rows = centroid_distance_rows("s", Dataset::Field, &v, &[1, 2]).unwrap();
        assert_eq!(rows.iter().filter(|r| r.bin_size == 1).count(), 3);
        assert_eq!(rows.iter().filter(|r| r.bin_size == 2).count(), 1);
        assert!(centroid_distance_rows("s", Dataset::Field, &v, &[3]).unwrap().is_empty());
        assert_eq!(default_bin_sizes(9), vec![1, 2, 3, 4]);
        assert_eq!(default_bin_sizes(100).len(), 15);
    }

    fn turn(i: usize, text: &str) -> Turn {
        Turn::new("s", "p", 2 * i, Agent::User, text)
    }

    #[test]
    fn embedding_batches_keep_order() {
        let turns: Vec<Turn> = ["a", "b", "a", "c", "d"].iter().enumerate().map(|(i, t)| turn(i, t)).collect();
        let refs: Vec<&Turn> = turns.iter().collect();
        let stub = HashOneHotEmbedder::new(8);
        let out = embed_turns(&refs, &stub, 2, 3).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[0].values, out[2].values);
        for (t, v) in turns.iter().zip(&out) {
            assert_eq!(v.turn_index, t.turn_index);
            assert_eq!(v.values[stub.slot(&t.text)], 1.0);
            assert_eq!(v.values.iter().sum::<f64>(), 1.0);
        }
        assert!(embed_turns(&[], &stub, 2, 1).unwrap().is_empty());
    }

    struct Drifting;

    impl EmbeddingProvider for Drifting {
        fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f64>>> {
            Ok(texts.iter().map(|t| vec![1.0; if t == "x" { 3 } else { 4 }]).collect())
        }
        fn capabilities(&self) -> ProviderResult<Capabilities> {
            Ok(Capabilities::default())
        }
    }

    #[test]
    fn drift_is_detected() {
        let turns = [turn(0, "a"), turn(1, "x")];
        let refs: Vec<&Turn> = turns.iter().collect();
        assert!(matches!(embed_turns(&refs, &Drifting, 1, 1), Err(ExplorationError::DimensionDrift { .. })));
    }

    #[test]
    fn embeddings_file_round_trip() {
        let mut m = Embeddings::new();
        m.insert(TurnKey { story_id: "s".into(), turn_index: 0 }, vec![0.25, -1.5]);
        m.insert(TurnKey { story_id: "s".into(), turn_index: 2 }, vec![1e-9, 3.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        write_embeddings(&m, File::create(&path).unwrap()).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn scale_invariant(
            u in proptest::collection::vec(-3.0f64..3.0, 5),
            v in proptest::collection::vec(-3.0f64..3.0, 5),
            a in 0.01f64..50.0, b in 0.01f64..50.0,
        ) {
            let Ok(d) = cosine_distance(&u, &v) else { return Ok(()) };
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((cosine_distance(&su, &sv).unwrap() - d).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
