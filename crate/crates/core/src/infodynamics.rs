//! Novelty, transience and resonance of story segments from token surprisal.
//!
//! Each turn is a segment of the story's token stream. With `w` the window:
//! - novelty: mean surprisal (bits) of the segment's tokens given the `w`
//!   tokens before the segment;
//! - transience: mean surprisal of the `w` tokens after the segment given the
//!   segment alone;
//! - resonance = novelty - transience.
//!
//! Segments without `w` tokens on either side are boundary-excluded and carry
//! no values. Context never crosses a story boundary.

use std::io::Write;

use dyadkit_stats::{mixed_random_intercept, Design, Estimate, MixedFit, StatsError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Agent, Corpus, Story};
use crate::providers::{ProviderError, SurprisalProvider, Tokenizer};

pub const DEFAULT_WINDOW: usize = 128;
pub const TOKEN_GROUPS: usize = 10;

#[derive(Debug, Error)]
pub enum InfodynError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("story {story_id} turn {turn_index}: detokenized span {found:?} does not match text {expected:?}")]
    TokenizerMismatch { story_id: String, turn_index: usize, expected: String, found: String },
    #[error("story {story_id} turn {turn_index} has no tokens")]
    EmptySegment { story_id: String, turn_index: usize },
    #[error("segment {0} lacks a full context window")]
    BoundaryExcluded(usize),
    #[error("segment index {0} out of range")]
    NoSuchSegment(usize),
    #[error("no records for agent {0}")]
    MissingAgent(Agent),
    #[error("token amounts fall into {0} group(s); at least 2 are needed")]
    TooFewGroups(usize),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{0}")]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, InfodynError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub turn_index: usize,
    pub agent: Agent,
    pub start: usize,
    /// exclusive
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    pub story_id: String,
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
}

impl TokenStream {
    /// The span holding token `i`.
    pub fn span_of(&self, i: usize) -> Option<&Span> {
        let k = self.spans.partition_point(|s| s.end <= i);
        self.spans.get(k).filter(|s| s.start <= i)
    }

    fn span(&self, segment: usize) -> Result<Span> {
        self.spans.get(segment).copied().ok_or(InfodynError::NoSuchSegment(segment))
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Tokenizes each turn and concatenates them, checking that every span
/// detokenizes back to its turn (whitespace-normalized).
pub fn segment_stream(story: &Story, tokenizer: &dyn Tokenizer) -> Result<TokenStream> {
    let mut tokens = Vec::new();
    let mut spans = Vec::with_capacity(2 * story.len());
    for turn in story.turns() {
        let ids = tokenizer.tokenize(&turn.text)?;
        if ids.is_empty() {
            return Err(InfodynError::EmptySegment { story_id: story.story_id.clone(), turn_index: turn.turn_index });
        }
        let back = tokenizer.detokenize(&ids)?;
        if normalize_ws(&back) != normalize_ws(&turn.text) {
            return Err(InfodynError::TokenizerMismatch {
                story_id: story.story_id.clone(),
                turn_index: turn.turn_index,
                expected: turn.text.clone(),
                found: back,
            });
        }
        let start = tokens.len();
        tokens.extend(ids);
        spans.push(Span { turn_index: turn.turn_index, agent: turn.agent, start, end: tokens.len() });
    }
    Ok(TokenStream { story_id: story.story_id.clone(), tokens, spans })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn novelty(stream: &TokenStream, segment: usize, provider: &dyn SurprisalProvider, w: usize) -> Result<f64> {
    let span = stream.span(segment)?;
    if span.start < w {
        return Err(InfodynError::BoundaryExcluded(segment));
    }
    let bits = provider.surprisal_bits(&stream.tokens[span.start - w..span.start], &stream.tokens[span.start..span.end])?;
    Ok(mean(&bits))
}

pub fn transience(stream: &TokenStream, segment: usize, provider: &dyn SurprisalProvider, w: usize) -> Result<f64> {
    let span = stream.span(segment)?;
    if span.end + w > stream.tokens.len() || w == 0 {
        return Err(InfodynError::BoundaryExcluded(segment));
    }
    let bits = provider.surprisal_bits(&stream.tokens[span.start..span.end], &stream.tokens[span.end..span.end + w])?;
    Ok(mean(&bits))
}

pub fn resonance(novelty_bits: f64, transience_bits: f64) -> f64 {
    novelty_bits - transience_bits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub story_id: String,
    pub turn_index: usize,
    pub agent: Agent,
    pub n_tokens: usize,
    pub novelty_bits: Option<f64>,
    pub transience_bits: Option<f64>,
    pub resonance_bits: Option<f64>,
    pub boundary_excluded: bool,
}

impl SurprisalRecord {
    pub fn measured(story_id: &str, turn_index: usize, agent: Agent, n_tokens: usize, n: f64, t: f64) -> Self {
        Self {
            story_id: story_id.to_string(),
            turn_index,
            agent,
            n_tokens,
            novelty_bits: Some(n),
            transience_bits: Some(t),
            resonance_bits: Some(resonance(n, t)),
            boundary_excluded: false,
        }
    }

    pub fn excluded(story_id: &str, turn_index: usize, agent: Agent, n_tokens: usize) -> Self {
        Self {
            story_id: story_id.to_string(),
            turn_index,
            agent,
            n_tokens,
            novelty_bits: None,
            transience_bits: None,
            resonance_bits: None,
            boundary_excluded: true,
        }
    }

    /// `(novelty, resonance)` of a measured record.
    pub fn metrics(&self) -> Option<(f64, f64)> {
        Some((self.novelty_bits?, self.resonance_bits?))
    }
}

/// Whether a segment has a full window on both sides.
pub fn in_window(stream: &TokenStream, span: &Span, w: usize) -> bool {
    w > 0 && span.start >= w && span.end + w <= stream.tokens.len()
}

pub fn stream_records(stream: &TokenStream, provider: &dyn SurprisalProvider, w: usize) -> Result<Vec<SurprisalRecord>> {
    stream
        .spans
        .iter()
        .enumerate()
        .map(|(k, span)| {
            if !in_window(stream, span, w) {
                return Ok(SurprisalRecord::excluded(&stream.story_id, span.turn_index, span.agent, span.len()));
            }
            let n = novelty(stream, k, provider, w)?;
            let t = transience(stream, k, provider, w)?;
            Ok(SurprisalRecord::measured(&stream.story_id, span.turn_index, span.agent, span.len(), n, t))
        })
        .collect()
}

/// Records for every turn of every story, stories processed concurrently
/// with at most `parallelism` in flight.
pub fn compute_records(
    corpus: &Corpus,
    tokenizer: &dyn Tokenizer,
    provider: &dyn SurprisalProvider,
    w: usize,
    parallelism: usize,
) -> Result<Vec<SurprisalRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| InfodynError::Pool(e.to_string()))?;
    let per_story: Vec<Vec<SurprisalRecord>> = pool.install(|| {
        corpus
            .stories
            .par_iter()
            .map(|s| stream_records(&segment_stream(s, tokenizer)?, provider, w))
            .collect::<Result<_>>()
    })?;
    Ok(per_story.into_iter().flatten().collect())
}

/// Upper edges of the token-amount deciles (nearest-rank), ascending and
/// de-duplicated.
pub fn token_group_edges(n_tokens: &[usize], groups: usize) -> Vec<usize> {
    let mut sorted = n_tokens.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let mut edges: Vec<usize> = (1..groups).map(|k| sorted[((k * n).div_ceil(groups)).max(1) - 1]).collect();
    edges.dedup();
    edges
}

pub fn token_group(n_tokens: usize, edges: &[usize]) -> usize {
    edges.partition_point(|&e| e < n_tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceFit {
    pub model: MixedFit,
    pub slope_user: Estimate,
    pub slope_ai: Estimate,
    /// AI slope minus user slope.
    pub interaction: Estimate,
    pub group_edges: Vec<usize>,
}

/// `resonance ~ novelty * is_ai + (1 | token-amount decile)`, USER as the
/// reference level. Boundary-excluded records are skipped.
pub fn resonance_fit(records: &[SurprisalRecord]) -> Result<ResonanceFit> {
    let used: Vec<&SurprisalRecord> = records.iter().filter(|r| r.metrics().is_some()).collect();
    for agent in [Agent::User, Agent::Ai] {
        if !used.iter().any(|r| r.agent == agent) {
            return Err(InfodynError::MissingAgent(agent));
        }
    }
    let n_tokens: Vec<usize> = used.iter().map(|r| r.n_tokens).collect();
    let edges = token_group_edges(&n_tokens, TOKEN_GROUPS);
    let groups: Vec<usize> = n_tokens.iter().map(|&n| token_group(n, &edges)).collect();
    let distinct = groups.iter().collect::<std::collections::HashSet<_>>().len();
    if distinct < 2 {
        return Err(InfodynError::TooFewGroups(distinct));
    }
    let (nov, res): (Vec<f64>, Vec<f64>) = used.iter().filter_map(|r| r.metrics()).unzip();
    let ai: Vec<f64> = used.iter().map(|r| f64::from(u8::from(r.agent == Agent::Ai))).collect();
    let inter: Vec<f64> = nov.iter().zip(&ai).map(|(n, a)| n * a).collect();
    let design = Design::new()
        .intercept(res.len())
        .column("novelty", nov)
        .column("ai", ai)
        .column("novelty:ai", inter);
    let model = mixed_random_intercept(&res, &design, &groups)?;
    if model.singular {
        log::warn!("resonance model: no between-group variance, fixed effects are the OLS fit");
    }
    Ok(ResonanceFit {
        slope_user: model.contrast(&[0.0, 1.0, 0.0, 0.0]),
        slope_ai: model.contrast(&[0.0, 1.0, 0.0, 1.0]),
        interaction: model.contrast(&[0.0, 0.0, 0.0, 1.0]),
        group_edges: edges,
        model,
    })
}

pub fn write_records_csv<W: Write>(records: &[SurprisalRecord], out: W) -> csv::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "story_id",
        "turn_index",
        "agent",
        "n_tokens",
        "novelty_bits",
        "transience_bits",
        "resonance_bits",
        "boundary_excluded",
    ])?;
    for r in records {
        w.write_record([
            r.story_id.clone(),
            r.turn_index.to_string(),
            r.agent.as_str().to_string(),
            r.n_tokens.to_string(),
            opt(r.novelty_bits),
            opt(r.transience_bits),
            opt(r.resonance_bits),
            r.boundary_excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, Genre, Interaction, Turn};
    use crate::providers::{ByteTokenizer, ContextHashSurprisal, FixedProbability, LogBase, TableSurprisal};

    fn story(texts: &[&str]) -> Story {
        let inters = texts
            .chunks(2)
            .enumerate()
            .map(|(i, p)| Interaction {
                interaction_index: i,
                user_turn: Turn::new("s", "p", 2 * i, Agent::User, p[0]),
                ai_turn: Turn::new("s", "p", 2 * i + 1, Agent::Ai, p[1]),
            })
            .collect();
        Story::new("s", Dataset::Field, Genre::Unknown, inters)
    }

    #[test]
    fn spans_are_contiguous() {
        let st = segment_stream(&story(&["abc", "def"]), &ByteTokenizer).unwrap();
        assert_eq!(st.tokens.len(), 6);
        assert_eq!((st.spans[0].start, st.spans[0].end), (0, 3));
        assert_eq!((st.spans[1].start, st.spans[1].end), (3, 6));
        assert_eq!(st.span_of(4).unwrap().turn_index, 1);
        assert!(st.span_of(6).is_none());
        assert!(matches!(
            segment_stream(&story(&["abc", ""]), &ByteTokenizer),
            Err(InfodynError::EmptySegment { turn_index: 1, .. })
        ));
    }

    struct Lossy;

    impl Tokenizer for Lossy {
        fn tokenize(&self, text: &str) -> crate::providers::ProviderResult<Vec<u32>> {
            Ok(text.bytes().filter(u8::is_ascii_alphabetic).map(u32::from).collect())
        }
        fn detokenize(&self, ids: &[u32]) -> crate::providers::ProviderResult<String> {
            Ok(ids.iter().map(|&i| i as u8 as char).collect())
        }
    }

    #[test]
    fn lossy_tokenizer_is_rejected() {
        assert!(matches!(
            segment_stream(&story(&["ab1", "cd"]), &Lossy),
            Err(InfodynError::TokenizerMismatch { turn_index: 0, .. })
        ));
    }

    #[test]
    fn fixed_probability_bits() {
        let st = segment_stream(&story(&["aaaa", "bbbb", "cccc", "dddd"]), &ByteTokenizer).unwrap();
        for (p, bits) in [(0.5, 1.0), (1.0, 0.0), (1.0 / 256.0, 8.0)] {
            for base in [LogBase::E, LogBase::Two] {
                let prov = FixedProbability::with_base(p, base);
                assert!((novelty(&st, 1, &prov, 4).unwrap() - bits).abs() < 1e-12);
                assert!((transience(&st, 1, &prov, 4).unwrap() - bits).abs() < 1e-12);
            }
        }
        let alt = TableSurprisal { probabilities: vec![0.5, 0.25] };
        let long = segment_stream(&story(&[&"x".repeat(130), "y", &"z".repeat(128), "w"]), &ByteTokenizer).unwrap();
        assert!((transience(&long, 1, &alt, 128).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn boundaries() {
        let st = segment_stream(&story(&["aa", "bb", "cc", "dd"]), &ByteTokenizer).unwrap();
        let p = FixedProbability::new(0.5);
        assert!(matches!(novelty(&st, 0, &p, 2), Err(InfodynError::BoundaryExcluded(0))));
        assert!(matches!(transience(&st, 3, &p, 2), Err(InfodynError::BoundaryExcluded(3))));
        let recs = stream_records(&st, &p, 2).unwrap();
        let flags: Vec<bool> = recs.iter().map(|r| r.boundary_excluded).collect();
        assert_eq!(flags, vec![true, false, false, true]);
        assert!(recs[0].novelty_bits.is_none() && recs[0].resonance_bits.is_none());
        for r in recs.iter().filter(|r| !r.boundary_excluded) {
            assert_eq!(r.resonance_bits.unwrap(), r.novelty_bits.unwrap() - r.transience_bits.unwrap());
        }
        // a window wider than everything before segment 1
        let recs = stream_records(&st, &p, 3).unwrap();
        assert!(recs.iter().all(|r| r.boundary_excluded));
    }

    #[test]
    fn novelty_ignores_tokens_outside_window() {
        let a = segment_stream(&story(&["qqqqqq", "abcd", "efgh", "ijkl"]), &ByteTokenizer).unwrap();
        let b = segment_stream(&story(&["zzzzzz", "abcd", "efgh", "ijkl"]), &ByteTokenizer).unwrap();
        // window 4 only reaches into "abcd" for segment 2
        let n_a = novelty(&a, 2, &ContextHashSurprisal, 4).unwrap();
        let n_b = novelty(&b, 2, &ContextHashSurprisal, 4).unwrap();
        assert_eq!(n_a, n_b);
        // but a window of 8 sees the edit
        assert_ne!(novelty(&a, 2, &ContextHashSurprisal, 8).unwrap(), novelty(&b, 2, &ContextHashSurprisal, 8).unwrap());
    }

    #[test]
    fn decile_groups() {
        let n: Vec<usize> = (1..=100).collect();
        let edges = token_group_edges(&n, 10);
        assert_eq!(edges, vec![10, 20, 30, 40, 50, 60, 70, 80, 90]);
        assert_eq!(token_group(10, &edges), 0);
        assert_eq!(token_group(11, &edges), 1);
        assert_eq!(token_group(100, &edges), 9);
        assert_eq!(token_group_edges(&[5; 20], 10), vec![5]);
    }

    #[test]
    fn fit_preconditions() {
        let users: Vec<SurprisalRecord> =
            (0..10).map(|i| SurprisalRecord::measured("s", i, Agent::User, 5 + i, 5.0 + i as f64, 1.0)).collect();
        assert!(matches!(resonance_fit(&users), Err(InfodynError::MissingAgent(Agent::Ai))));
        let mut same: Vec<SurprisalRecord> =
            (0..10).map(|i| SurprisalRecord::measured("s", i, Agent::User, 7, i as f64, 1.0)).collect();
        same.push(SurprisalRecord::measured("s", 10, Agent::Ai, 7, 3.0, 1.0));
        assert!(matches!(resonance_fit(&same), Err(InfodynError::TooFewGroups(1))));
    }
}
