//! Turn-level valence by two routes: a small rule-based lexicon engine and a
//! seed-centroid projection in embedding space.
//!
//! Lexicon rules, in order:
//! 1. lowercase and split on anything that is not a letter or digit;
//! 2. look each token up, falling back to stripping one inflectional suffix;
//! 3. negators and intensifiers are modifiers and are never scored themselves;
//! 4. a matched token's score is multiplied by every intensifier among the
//!    `window` preceding tokens, and its sign flips once if any of those
//!    tokens is a negator;
//! 5. the turn value is the mean over matched tokens (0 when none match).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dataset, TurnKey};
use crate::providers::{EmbeddingProvider, ProviderError};

pub const DEFAULT_WINDOW: usize = 3;

const DA_LEXICON: &str = include_str!("../data/lexicon_da.tsv");
const DA_NEGATORS: &str = include_str!("../data/negators_da.txt");
const DA_INTENSIFIERS: &str = include_str!("../data/intensifiers_da.tsv");
const DA_SUFFIXES: &str = include_str!("../data/suffixes_da.txt");
const DA_SEEDS_POSITIVE: &str = include_str!("../data/seeds_positive_da.txt");
const DA_SEEDS_NEGATIVE: &str = include_str!("../data/seeds_negative_da.txt");

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("{file}:{line}: {message}")]
    LexiconFormat { file: String, line: usize, message: String },
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0} seed word list is empty")]
    EmptyWordList(&'static str),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("valences scored with different methods ({0:?} vs {1:?})")]
    MethodMismatch(Method, Method),
    #[error("no valence for turn {0:?}")]
    MissingValence(TurnKey),
}

pub type Result<T> = std::result::Result<T, SentimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lexicon,
    Embedding,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lexicon => "lexicon",
            Method::Embedding => "embedding",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lexicon" => Ok(Method::Lexicon),
            "embedding" => Ok(Method::Embedding),
            other => Err(format!("unknown valence method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub entries: HashMap<String, f64>,
    pub negators: HashSet<String>,
    pub intensifiers: HashMap<String, f64>,
    pub window: usize,
    /// Suffixes tried longest-first when a token has no entry of its own.
    pub suffixes: Vec<String>,
}

impl Lexicon {
    pub fn new(entries: HashMap<String, f64>) -> Self {
        Self {
            entries,
            negators: HashSet::new(),
            intensifiers: HashMap::new(),
            window: DEFAULT_WINDOW,
            suffixes: Vec::new(),
        }
    }

    pub fn with_negators<I: IntoIterator<Item = S>, S: Into<String>>(mut self, words: I) -> Self {
        self.negators = words.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_intensifiers<I: IntoIterator<Item = (S, f64)>, S: Into<String>>(mut self, words: I) -> Self {
        self.intensifiers = words.into_iter().map(|(w, m)| (w.into(), m)).collect();
        self
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_suffixes<I: IntoIterator<Item = S>, S: Into<String>>(mut self, suffixes: I) -> Self {
        self.suffixes = suffixes.into_iter().map(Into::into).collect();
        self.suffixes.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((w, s)) = self.entries.iter().find(|(_, s)| !s.is_finite()) {
            return Err(SentimentError::InvalidLexicon(format!("score for {w:?} is {s}")));
        }
        if let Some((w, m)) = self.intensifiers.iter().find(|(_, m)| !(m.is_finite() && **m > 0.0)) {
            return Err(SentimentError::InvalidLexicon(format!("multiplier for {w:?} is {m}")));
        }
        Ok(())
    }

    /// The bundled Danish word lists.
    pub fn danish_default() -> Self {
        Self::from_sources(
            ("lexicon_da.tsv", DA_LEXICON),
            ("negators_da.txt", DA_NEGATORS),
            ("intensifiers_da.tsv", DA_INTENSIFIERS),
            ("suffixes_da.txt", DA_SUFFIXES),
        )
        .expect("bundled lexicon is well-formed")
    }

    /// Loads `lexicon.tsv`, `negators.txt`, `intensifiers.tsv` and (optional)
    /// `suffixes.txt` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str, required: bool| -> Result<String> {
            let path = dir.join(name);
            match fs::read_to_string(&path) {
                Ok(s) => Ok(s),
                Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
                Err(source) => Err(SentimentError::Io { path: path.display().to_string(), source }),
            }
        };
        Self::from_sources(
            ("lexicon.tsv", &read("lexicon.tsv", true)?),
            ("negators.txt", &read("negators.txt", false)?),
            ("intensifiers.tsv", &read("intensifiers.tsv", false)?),
            ("suffixes.txt", &read("suffixes.txt", false)?),
        )
    }

    fn from_sources(
        entries: (&str, &str),
        negators: (&str, &str),
        intensifiers: (&str, &str),
        suffixes: (&str, &str),
    ) -> Result<Self> {
        let lex = Lexicon::new(parse_weighted(entries.0, entries.1.as_bytes())?.into_iter().collect())
            .with_negators(parse_words(negators.1.as_bytes()))
            .with_intensifiers(parse_weighted(intensifiers.0, intensifiers.1.as_bytes())?)
            .with_suffixes(parse_words(suffixes.1.as_bytes()));
        lex.validate()?;
        Ok(lex)
    }

    /// Score of a token, trying one suffix strip if the bare form is absent.
    pub fn lookup(&self, token: &str) -> Option<f64> {
        if let Some(s) = self.entries.get(token) {
            return Some(*s);
        }
        let n = token.chars().count();
        self.suffixes.iter().find_map(|suf| {
            let stem = token.strip_suffix(suf.as_str())?;
            (n - suf.chars().count() >= 3).then(|| self.entries.get(stem).copied()).flatten()
        })
    }

    fn is_modifier(&self, token: &str) -> bool {
        self.negators.contains(token) || self.intensifiers.contains_key(token)
    }
}

fn lines(reader: impl Read) -> impl Iterator<Item = (usize, String)> {
    BufReader::new(reader)
        .lines()
        .map_while(std::result::Result::ok)
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_words(reader: impl Read) -> Vec<String> {
    lines(reader).map(|(_, l)| l.to_lowercase()).collect()
}

/// `word<TAB>number` per line.
pub fn parse_weighted(file: &str, reader: impl Read) -> Result<Vec<(String, f64)>> {
    lines(reader)
        .map(|(line, l)| {
            let err = |message: String| SentimentError::LexiconFormat { file: file.to_string(), line, message };
            let (w, v) = l.split_once('\t').ok_or_else(|| err("expected word<TAB>value".into()))?;
            let v: f64 = v.trim().parse().map_err(|e| err(format!("{e}")))?;
            Ok((w.trim().to_lowercase(), v))
        })
        .collect()
}

/// Lowercased word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValenceScore {
    pub method: Method,
    pub value: f64,
    /// Lexicon hits; always 0 for the embedding method.
    pub matched_count: usize,
}

pub fn lexicon_valence(text: &str, lexicon: &Lexicon) -> ValenceScore {
    let tokens = tokenize(text);
    let mut sum = 0.0;
    let mut matched = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if lexicon.is_modifier(tok) {
            continue;
        }
        let Some(score) = lexicon.lookup(tok) else { continue };
        let before = &tokens[i.saturating_sub(lexicon.window)..i];
        let boost: f64 = before.iter().filter_map(|t| lexicon.intensifiers.get(t)).product();
        let sign = if before.iter().any(|t| lexicon.negators.contains(t)) { -1.0 } else { 1.0 };
        sum += score * boost * sign;
        matched += 1;
    }
    ValenceScore {
        method: Method::Lexicon,
        value: if matched == 0 { 0.0 } else { sum / matched as f64 },
        matched_count: matched,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCentroids {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub positive_words: Vec<String>,
    pub negative_words: Vec<String>,
}

pub fn default_seed_words() -> (Vec<String>, Vec<String>) {
    (parse_words(DA_SEEDS_POSITIVE.as_bytes()), parse_words(DA_SEEDS_NEGATIVE.as_bytes()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit_mean(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = vectors[0].len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(SentimentError::DimensionMismatch { expected: dim, found: v.len() });
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = norm(&mean);
    if n == 0.0 || !n.is_finite() {
        return Err(SentimentError::ZeroVector);
    }
    Ok(mean.into_iter().map(|m| m / n).collect())
}

pub fn seed_centroids(pos_words: &[String], neg_words: &[String], provider: &dyn EmbeddingProvider) -> Result<SeedCentroids> {
    if pos_words.is_empty() {
        return Err(SentimentError::EmptyWordList("positive"));
    }
    if neg_words.is_empty() {
        return Err(SentimentError::EmptyWordList("negative"));
    }
    let positive = unit_mean(&provider.embed(pos_words)?)?;
    let negative = unit_mean(&provider.embed(neg_words)?)?;
    if positive.len() != negative.len() {
        return Err(SentimentError::DimensionMismatch { expected: positive.len(), found: negative.len() });
    }
    Ok(SeedCentroids {
        positive,
        negative,
        positive_words: pos_words.to_vec(),
        negative_words: neg_words.to_vec(),
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}

/// `cos(e, positive) - cos(e, negative)`.
pub fn embedding_valence(e: &[f64], centroids: &SeedCentroids) -> Result<ValenceScore> {
    if e.len() != centroids.positive.len() {
        return Err(SentimentError::DimensionMismatch { expected: centroids.positive.len(), found: e.len() });
    }
    if norm(e) == 0.0 {
        return Err(SentimentError::ZeroVector);
    }
    let value = (cosine(e, &centroids.positive) - cosine(e, &centroids.negative)).clamp(-2.0, 2.0);
    Ok(ValenceScore { method: Method::Embedding, value, matched_count: 0 })
}

pub fn valence_gap(user: &ValenceScore, ai: &ValenceScore) -> Result<f64> {
    if user.method != ai.method {
        return Err(SentimentError::MethodMismatch(user.method, ai.method));
    }
    Ok(user.value - ai.value)
}

pub type Valences = BTreeMap<TurnKey, ValenceScore>;

pub fn score_corpus_lexicon(corpus: &Corpus, lexicon: &Lexicon) -> Valences {
    corpus.turns().map(|t| (t.key(), lexicon_valence(&t.text, lexicon))).collect()
}

/// Scores turns whose embeddings have already been computed.
pub fn score_embeddings(embeddings: &BTreeMap<TurnKey, Vec<f64>>, centroids: &SeedCentroids) -> Result<Valences> {
    embeddings.iter().map(|(k, e)| Ok((k.clone(), embedding_valence(e, centroids)?))).collect()
}

/// One row per interaction: both valences and their gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValenceGap {
    pub dataset: Dataset,
    pub story_id: String,
    pub session_id: String,
    pub interaction_index: usize,
    pub method: Method,
    pub user: f64,
    pub ai: f64,
    pub gap: f64,
}

pub fn valence_table(corpus: &Corpus, valences: &Valences) -> Result<Vec<ValenceGap>> {
    let get = |k: TurnKey| valences.get(&k).copied().ok_or(SentimentError::MissingValence(k));
    let mut rows = Vec::with_capacity(corpus.interaction_count());
    for story in &corpus.stories {
        for inter in &story.interactions {
            let u = get(inter.user_turn.key())?;
            let a = get(inter.ai_turn.key())?;
            rows.push(ValenceGap {
                dataset: story.dataset,
                story_id: story.story_id.clone(),
                session_id: inter.session_id().to_string(),
                interaction_index: inter.interaction_index,
                method: u.method,
                user: u.value,
                ai: a.value,
                gap: valence_gap(&u, &a)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_valence_csv<W: Write>(rows: &[ValenceGap], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "story_id", "session_id", "interaction_index", "method", "user", "ai", "gap"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str().to_string(),
            r.story_id.clone(),
            r.session_id.clone(),
            r.interaction_index.to_string(),
            r.method.as_str().to_string(),
            r.user.to_string(),
            r.ai.to_string(),
            r.gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
