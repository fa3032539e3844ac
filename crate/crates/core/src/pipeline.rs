//! End-to-end runs: ingest → preprocess → sentiment → {alignment,
//! exploration, infodynamics} → report, driven by a TOML run config.
//!
//! Outputs land in one subdirectory per analysis under `out_dir`, plus a
//! `manifest.json` listing every file with its SHA-256. Nothing in the
//! manifest depends on wall-clock time, so fixed inputs and stub providers
//! give byte-identical manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{
    align_stories, alignment_anova, complete_cases, alignment_ttest, direction_contrast, rubber_band_fit, stage_profiles,
    write_alignment_csv, write_stages_csv, AlignmentError, Direction, SkippedStory, StageProfile,
    StoryValences,
};
use crate::corpus::{load_transcripts, Corpus, CorpusError, Dataset, LoadOptions, Story, Turn};
use crate::exploration::{
    embed_turns, exploration_fit, exploration_rows, story_vectors, to_map, write_rows_csv, Embeddings,
    ExplorationError,
};
use crate::infodynamics::{compute_records, resonance_fit, write_records_csv, InfodynError, DEFAULT_WINDOW};
use crate::preprocess::{
    filter_by_edit_distance, rectify_corpus, ExclusionLog, PreprocessError, RectificationMap,
    DEFAULT_EDIT_THRESHOLD,
};
use crate::providers::{
    BagOfWordsEmbedder, ByteTokenizer, ChatProvider, ContextHashSurprisal, CorrectorProvider, EchoChat,
    EmbeddingProvider, FixedProbability, HashOneHotEmbedder, HttpChat, HttpClient, HttpCorrector, HttpEmbedder,
    HttpSurprisal, HttpTokenizer, IdentityCorrector, LogBase, ProviderEndpoint, ProviderError, ReplaySurprisal,
    SurprisalProvider, Tokenizer, UnigramSurprisal,
};
use crate::report::{self, FitLine, ReportError};
use crate::sentiment::{
    default_seed_words, score_corpus_lexicon, score_embeddings, seed_centroids, valence_table, write_valence_csv,
    Lexicon, Method, SentimentError, ValenceGap, Valences,
};

/// Where a provider comes from. Stubs need no network access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    Identity,
    HashOneHot { dim: usize },
    BagOfWords { dim: usize },
    Byte,
    Fixed { p: f64 },
    Unigram,
    ContextHash,
    Replay { path: PathBuf, #[serde(default)] base: LogBase },
    Echo,
    Http(ProviderEndpoint),
}

impl ProviderSpec {
    fn kind(&self) -> &'static str {
        match self {
            ProviderSpec::Identity => "identity",
            ProviderSpec::HashOneHot { .. } => "hash_one_hot",
            ProviderSpec::BagOfWords { .. } => "bag_of_words",
            ProviderSpec::Byte => "byte",
            ProviderSpec::Fixed { .. } => "fixed",
            ProviderSpec::Unigram => "unigram",
            ProviderSpec::ContextHash => "context_hash",
            ProviderSpec::Replay { .. } => "replay",
            ProviderSpec::Echo => "echo",
            ProviderSpec::Http(_) => "http",
        }
    }

    fn mismatch(&self, role: &str) -> PipelineError {
        PipelineError::ConfigInvalid(format!("provider kind '{}' cannot act as {role}", self.kind()))
    }

    fn client(endpoint: &ProviderEndpoint) -> Result<HttpClient, PipelineError> {
        HttpClient::new(endpoint.clone()).map_err(PipelineError::ConfigInvalid)
    }

    pub fn corrector(&self) -> Result<Box<dyn CorrectorProvider>, PipelineError> {
        match self {
            ProviderSpec::Identity => Ok(Box::new(IdentityCorrector)),
            ProviderSpec::Http(e) => Ok(Box::new(HttpCorrector(Self::client(e)?))),
            _ => Err(self.mismatch("corrector")),
        }
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
        match self {
            ProviderSpec::HashOneHot { dim } if *dim > 0 => Ok(Box::new(HashOneHotEmbedder::new(*dim))),
            ProviderSpec::BagOfWords { dim } if *dim > 0 => Ok(Box::new(BagOfWordsEmbedder::new(*dim))),
            ProviderSpec::HashOneHot { .. } | ProviderSpec::BagOfWords { .. } => {
                Err(PipelineError::ConfigInvalid("embedding dim must be positive".into()))
            }
            ProviderSpec::Http(e) => Ok(Box::new(HttpEmbedder(Self::client(e)?))),
            _ => Err(self.mismatch("embedder")),
        }
    }

    pub fn tokenizer(&self) -> Result<Box<dyn Tokenizer>, PipelineError> {
        match self {
            ProviderSpec::Byte => Ok(Box::new(ByteTokenizer)),
            ProviderSpec::Http(e) => Ok(Box::new(HttpTokenizer(Self::client(e)?))),
            _ => Err(self.mismatch("tokenizer")),
        }
    }

    pub fn surprisal(&self) -> Result<Box<dyn SurprisalProvider>, PipelineError> {
        match self {
            ProviderSpec::Fixed { p } if *p > 0.0 && *p <= 1.0 => Ok(Box::new(FixedProbability::new(*p))),
            ProviderSpec::Fixed { .. } => Err(PipelineError::ConfigInvalid("fixed probability must be in (0, 1]".into())),
            ProviderSpec::Unigram => Ok(Box::new(UnigramSurprisal)),
            ProviderSpec::ContextHash => Ok(Box::new(ContextHashSurprisal)),
            ProviderSpec::Replay { path, base } => ReplaySurprisal::load(path, *base)
                .map(|r| Box::new(r) as Box<dyn SurprisalProvider>)
                .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display()))),
            ProviderSpec::Http(e) => Ok(Box::new(HttpSurprisal(Self::client(e)?))),
            _ => Err(self.mismatch("surprisal provider")),
        }
    }

    pub fn chat(&self) -> Result<Box<dyn ChatProvider>, PipelineError> {
        match self {
            ProviderSpec::Echo => Ok(Box::new(EchoChat)),
            ProviderSpec::Http(e) => Ok(Box::new(HttpChat(Self::client(e)?))),
            _ => Err(self.mismatch("chat provider")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub corrector: ProviderSpec,
    pub embedder: ProviderSpec,
    pub tokenizer: ProviderSpec,
    pub surprisal: ProviderSpec,
    pub chat: ProviderSpec,
}

impl Default for Providers {
    fn default() -> Self {
        Self {
            corrector: ProviderSpec::Identity,
            embedder: ProviderSpec::BagOfWords { dim: 64 },
            tokenizer: ProviderSpec::Byte,
            surprisal: ProviderSpec::ContextHash,
            chat: ProviderSpec::Echo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analyses {
    pub alignment: bool,
    /// Dataset × direction ANOVA; needs the simulated corpus.
    pub anova: bool,
    pub rubber_band: bool,
    pub exploration: bool,
    pub infodynamics: bool,
    pub figures: bool,
}

impl Default for Analyses {
    fn default() -> Self {
        Self { alignment: true, anova: true, rubber_band: true, exploration: true, infodynamics: true, figures: true }
    }
}

impl Analyses {
    pub fn only_alignment() -> Self {
        Self { exploration: false, infodynamics: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub field: Option<PathBuf>,
    pub simulated: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Seed for the synthetic suites.
    pub seed: u64,
    pub method: Method,
    /// Directory with lexicon.tsv etc.; the bundled Danish lexicon otherwise.
    pub lexicon_dir: Option<PathBuf>,
    /// Rectify and filter field user turns before scoring.
    pub preprocess: bool,
    /// Score the corrected user text rather than the original.
    pub use_corrected_text: bool,
    pub edit_threshold: usize,
    pub drop_trailing_user_turn: bool,
    pub window: usize,
    pub bin_sizes: Option<Vec<usize>>,
    pub embed_batch: usize,
    pub parallelism: usize,
    pub analyses: Analyses,
    pub providers: Providers,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            field: None,
            simulated: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            method: Method::Lexicon,
            lexicon_dir: None,
            preprocess: true,
            use_corrected_text: true,
            edit_threshold: DEFAULT_EDIT_THRESHOLD,
            drop_trailing_user_turn: false,
            window: DEFAULT_WINDOW,
            bin_sizes: None,
            embed_batch: 32,
            parallelism: 4,
            analyses: Analyses::default(),
            providers: Providers::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.field.as_mut().map(resolve);
        cfg.simulated.as_mut().map(resolve);
        cfg.lexicon_dir.as_mut().map(resolve);
        resolve(&mut cfg.out_dir);
        if let ProviderSpec::Replay { path, .. } = &mut cfg.providers.surprisal {
            resolve(path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::ConfigInvalid(m));
        let a = &self.analyses;
        if !(a.alignment || a.exploration || a.infodynamics) {
            return bad("no analysis enabled".into());
        }
        let Some(field) = &self.field else {
            return bad("no field corpus given".into());
        };
        for p in std::iter::once(field).chain(&self.simulated) {
            if !p.is_file() {
                return bad(format!("corpus file {} does not exist", p.display()));
            }
        }
        if a.alignment && a.anova && self.simulated.is_none() {
            return bad("the dataset × direction ANOVA needs both the field and the simulated corpus".into());
        }
        if self.window == 0 || self.parallelism == 0 || self.embed_batch == 0 {
            return bad("window, parallelism and embed_batch must be positive".into());
        }
        if let Some(b) = &self.bin_sizes {
            if b.is_empty() || b.contains(&0) {
                return bad("bin_sizes must be non-empty and positive".into());
            }
        }
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return bad(format!("{} is not a directory", self.out_dir.display()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Preprocess,
    Sentiment,
    Alignment,
    Exploration,
    Infodynamics,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Error)]
pub enum StageCause {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Infodynamics(#[from] InfodynError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl StageCause {
    pub fn is_provider(&self) -> bool {
        matches!(
            self,
            StageCause::Provider(_)
                | StageCause::Preprocess(PreprocessError::Provider(_))
                | StageCause::Sentiment(SentimentError::Provider(_))
                | StageCause::Exploration(ExplorationError::Provider(_))
                | StageCause::Infodynamics(InfodynError::Provider(_) | InfodynError::TokenizerMismatch { .. })
        )
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{stage} stage failed: {cause}")]
    StageFailed { stage: Stage, cause: StageCause },
}

impl PipelineError {
    /// 2 for configuration problems, 3 when a provider failed, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::ConfigInvalid(_) => 2,
            PipelineError::StageFailed { cause, .. } if cause.is_provider() => 3,
            PipelineError::StageFailed { .. } => 4,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageCause>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::StageFailed { stage, cause: e.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub analysis: String,
    pub sha256: String,
    pub bytes: usize,
    /// Data rows for CSV files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub files: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusions: Option<ExclusionLog>,
}

impl ReportBundle {
    pub fn analyses(&self) -> Vec<&str> {
        let mut a: Vec<&str> = self.files.iter().map(|f| f.analysis.as_str()).collect();
        a.dedup();
        a
    }
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Output<'a> {
    dir: &'a Path,
    files: Vec<ManifestEntry>,
}

impl Output<'_> {
    fn write(&mut self, analysis: &str, name: &str, bytes: &[u8], rows: Option<usize>) -> std::io::Result<()> {
        let rel = format!("{analysis}/{name}");
        let path = self.dir.join(analysis).join(name);
        fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
        fs::write(&path, bytes)?;
        self.files.push(ManifestEntry {
            path: rel,
            analysis: analysis.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
            rows,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, analysis: &str, name: &str, value: &T) -> Result<(), StageCause> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(self.write(analysis, name, &bytes, None)?)
    }

    fn csv<F>(&mut self, analysis: &str, name: &str, rows: usize, render: F) -> Result<(), StageCause>
    where
        F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    {
        let mut bytes = Vec::new();
        render(&mut bytes)?;
        Ok(self.write(analysis, name, &bytes, Some(rows))?)
    }
}

/// Either a result or the reason there is none; keeps one failed test from
/// hiding the rest of a summary.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "lowercase")]
enum Outcome<T> {
    Ok(T),
    Error(String),
}

impl<T, E: fmt::Display> From<Result<T, E>> for Outcome<T> {
    fn from(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Error(e.to_string()),
        }
    }
}

/// Replaces the text of every rectified user turn with its correction.
pub fn apply_corrections(corpus: &Corpus, rectified: &RectificationMap) -> Corpus {
    let fix = |t: &Turn| match rectified.get(&t.key()) {
        Some(r) => Turn { char_count: r.corrected_text.chars().count(), text: r.corrected_text.clone(), ..t.clone() },
        None => t.clone(),
    };
    let stories = corpus
        .stories
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for i in &mut s.interactions {
                i.user_turn = fix(&i.user_turn);
            }
            s
        })
        .collect();
    Corpus { dataset: corpus.dataset, stories, provenance: corpus.provenance.clone() }
}

fn all_turns(corpus: &Corpus) -> Vec<&Turn> {
    corpus.stories.iter().flat_map(|s: &Story| s.interactions.iter().flat_map(|i| [&i.user_turn, &i.ai_turn])).collect()
}

struct Scored {
    corpus: Corpus,
    embeddings: Option<Embeddings>,
    gaps: Vec<ValenceGap>,
    valences: Valences,
}

/// Runs every enabled stage and writes the report bundle to `out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ReportBundle, PipelineError> {
    cfg.validate()?;
    let a = cfg.analyses;
    let opts = LoadOptions { drop_trailing_user_turn: cfg.drop_trailing_user_turn };

    // ingest
    let field_path = cfg.field.as_ref().expect("validated");
    let mut field = load_transcripts(field_path, Dataset::Field, opts).at(Stage::Ingest)?;
    let simulated = match &cfg.simulated {
        Some(p) => Some(load_transcripts(p, Dataset::Simulated, opts).at(Stage::Ingest)?),
        None => None,
    };
    log::info!(
        "ingested {} field interactions{}",
        field.interaction_count(),
        simulated.as_ref().map(|s| format!(", {} simulated", s.interaction_count())).unwrap_or_default()
    );

    // preprocess: field user turns only
    let mut exclusions = None;
    if cfg.preprocess {
        let corrector = cfg.providers.corrector.corrector()?;
        let map = rectify_corpus(&field, corrector.as_ref(), cfg.parallelism).at(Stage::Preprocess)?;
        let filtered = filter_by_edit_distance(&field, &map, cfg.edit_threshold).at(Stage::Preprocess)?;
        log::info!("preprocess kept {} of {} interactions", filtered.log.after, filtered.log.before);
        field = if cfg.use_corrected_text {
            apply_corrections(&filtered.corpus, &filtered.rectified)
        } else {
            filtered.corpus
        };
        exclusions = Some(filtered.log);
    }

    // sentiment (+ embeddings shared with exploration)
    let need_embeddings = a.exploration || cfg.method == Method::Embedding;
    let embedder = if need_embeddings { Some(cfg.providers.embedder.embedder()?) } else { None };
    let lexicon = match (&cfg.lexicon_dir, cfg.method) {
        (Some(dir), Method::Lexicon) => Some(Lexicon::load_dir(dir).at(Stage::Sentiment)?),
        (None, Method::Lexicon) => Some(Lexicon::danish_default()),
        _ => None,
    };
    let centroids = match (cfg.method, &embedder) {
        (Method::Embedding, Some(e)) => {
            let (pos, neg) = default_seed_words();
            Some(seed_centroids(&pos, &neg, e.as_ref()).at(Stage::Sentiment)?)
        }
        _ => None,
    };
    let mut scored = Vec::new();
    for corpus in std::iter::once(field).chain(simulated) {
        let embeddings = match &embedder {
            Some(e) => Some(to_map(
                embed_turns(&all_turns(&corpus), e.as_ref(), cfg.embed_batch, cfg.parallelism).at(Stage::Sentiment)?,
            )),
            None => None,
        };
        let valences = match (&lexicon, &centroids, &embeddings) {
            (Some(lex), _, _) => score_corpus_lexicon(&corpus, lex),
            (None, Some(c), Some(emb)) => score_embeddings(emb, c).at(Stage::Sentiment)?,
            _ => unreachable!("a scorer exists for every method"),
        };
        let gaps = valence_table(&corpus, &valences).at(Stage::Sentiment)?;
        scored.push(Scored { corpus, embeddings, gaps, valences });
    }

    let mut out = Output { dir: &cfg.out_dir, files: Vec::new() };
    fs::create_dir_all(&cfg.out_dir).at(Stage::Report)?;
    if a.alignment {
        alignment_stage(cfg, &scored, &mut out)?;
    }
    if a.exploration {
        exploration_stage(cfg, &scored, &mut out)?;
    }
    if a.infodynamics {
        infodynamics_stage(cfg, &scored, &mut out)?;
    }

    let bundle = ReportBundle { files: out.files, exclusions };
    let mut bytes = serde_json::to_vec_pretty(&bundle).at(Stage::Report)?;
    bytes.push(b'\n');
    fs::write(cfg.out_dir.join(MANIFEST), bytes).at(Stage::Report)?;
    Ok(bundle)
}

#[derive(Serialize)]
struct ConditionTest {
    dataset: Dataset,
    direction: Direction,
    n: usize,
    test: Outcome<dyadkit_stats::TTestResult>,
}

#[derive(Serialize)]
struct AlignmentSummary {
    conditions: Vec<ConditionTest>,
    /// Paired within − across per dataset.
    direction_contrast: Vec<(Dataset, Outcome<dyadkit_stats::TTestResult>)>,
    anova: Option<dyadkit_stats::AnovaTable>,
    /// Stories missing from at least one ANOVA cell.
    anova_excluded: Vec<String>,
    skipped: Vec<SkippedStory>,
}

fn alignment_stage(cfg: &RunConfig, scored: &[Scored], out: &mut Output) -> Result<(), PipelineError> {
    const A: &str = "alignment";
    let st = Stage::Alignment;
    let gaps: Vec<ValenceGap> = scored.iter().flat_map(|s| s.gaps.iter().cloned()).collect();
    out.csv(A, "valence.csv", gaps.len(), |w| write_valence_csv(&gaps, w)).at(st)?;

    let mut series = Vec::new();
    for s in scored {
        for story in &s.corpus.stories {
            series.push(StoryValences::from_story(story, &s.valences).at(st)?);
        }
    }
    let (results, skipped) = align_stories(&series);
    out.csv(A, "fisher_z.csv", results.len(), |w| write_alignment_csv(&results, w)).at(st)?;

    let datasets: Vec<Dataset> = scored.iter().map(|s| s.corpus.dataset).collect();
    let mut conditions = Vec::new();
    for &d in &datasets {
        for dir in Direction::BOTH {
            let z: Vec<f64> =
                results.iter().filter(|r| r.dataset == d && r.direction == dir).map(|r| r.fisher_z).collect();
            conditions.push(ConditionTest { dataset: d, direction: dir, n: z.len(), test: alignment_ttest(&z, 0.0).into() });
        }
    }
    let contrast = datasets.iter().map(|&d| (d, direction_contrast(&results, d).into())).collect();
    let (anova, anova_excluded) = if cfg.analyses.anova {
        let (complete, dropped) = complete_cases(&results);
        (Some(alignment_anova(&complete).at(st)?), dropped)
    } else {
        (None, Vec::new())
    };
    let summary = AlignmentSummary { conditions, direction_contrast: contrast, anova, anova_excluded, skipped };
    out.json(A, "tests.json", &summary).at(st)?;

    let mut profiles: Vec<StageProfile> = Vec::new();
    if cfg.analyses.rubber_band {
        let mut fits = Vec::new();
        for &d in &datasets {
            let rows: Vec<ValenceGap> = gaps.iter().filter(|g| g.dataset == d).cloned().collect();
            let (p, excluded) = stage_profiles(&rows);
            log::info!("{d}: {} sessions staged, {} too short", p.len(), excluded.len());
            fits.push((d, Outcome::from(rubber_band_fit(&p))));
            profiles.extend(p);
        }
        out.csv(A, "stages.csv", profiles.len(), |w| write_stages_csv(&profiles, w)).at(st)?;
        out.json(A, "rubber_band.json", &fits).at(st)?;
    }

    if cfg.analyses.figures {
        let r = Stage::Report;
        out.write(A, "valence.svg", report::valence_svg(&gaps).at(r)?.as_bytes(), None).at(r)?;
        if !results.is_empty() {
            out.write(A, "fisher_z.svg", report::alignment_svg(&results).at(r)?.as_bytes(), None).at(r)?;
        }
        if !profiles.is_empty() {
            out.write(A, "stages.svg", report::stages_svg(&profiles).at(r)?.as_bytes(), None).at(r)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ExplorationSummary {
    slope_simulated: dyadkit_stats::Estimate,
    slope_field: dyadkit_stats::Estimate,
    interaction: dyadkit_stats::Estimate,
    model: dyadkit_stats::MixedFit,
}

fn exploration_stage(cfg: &RunConfig, scored: &[Scored], out: &mut Output) -> Result<(), PipelineError> {
    const A: &str = "exploration";
    let st = Stage::Exploration;
    let mut stories = Vec::new();
    for s in scored {
        let emb = s.embeddings.as_ref().expect("embeddings computed when exploration is enabled");
        stories.extend(story_vectors(&s.corpus, emb).at(st)?);
    }
    let rows = exploration_rows(&stories, cfg.bin_sizes.as_deref()).at(st)?;
    out.csv(A, "bins.csv", rows.len(), |w| write_rows_csv(&rows, w)).at(st)?;
    let mut lines = None;
    if scored.len() == 2 {
        let fit = exploration_fit(&rows).at(st)?;
        lines = Some(FitLine::exploration(&fit));
        let summary = ExplorationSummary {
            slope_simulated: fit.slope_simulated,
            slope_field: fit.slope_field,
            interaction: fit.interaction,
            model: fit.model,
        };
        out.json(A, "fit.json", &summary).at(st)?;
    }
    if cfg.analyses.figures && !rows.is_empty() {
        let svg = report::exploration_svg(&rows, lines.as_ref()).at(Stage::Report)?;
        out.write(A, "exploration.svg", svg.as_bytes(), None).at(Stage::Report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ResonanceSummary {
    slope_user: dyadkit_stats::Estimate,
    slope_ai: dyadkit_stats::Estimate,
    interaction: dyadkit_stats::Estimate,
    group_edges: Vec<usize>,
    model: dyadkit_stats::MixedFit,
}

fn infodynamics_stage(cfg: &RunConfig, scored: &[Scored], out: &mut Output) -> Result<(), PipelineError> {
    const A: &str = "infodynamics";
    let st = Stage::Infodynamics;
    let tokenizer = cfg.providers.tokenizer.tokenizer()?;
    let provider = cfg.providers.surprisal.surprisal()?;
    for s in scored {
        let d = s.corpus.dataset;
        let records =
            compute_records(&s.corpus, tokenizer.as_ref(), provider.as_ref(), cfg.window, cfg.parallelism).at(st)?;
        out.csv(A, &format!("records_{d}.csv"), records.len(), |w| write_records_csv(&records, w)).at(st)?;
        let fit = resonance_fit(&records);
        let lines = fit.as_ref().ok().map(FitLine::resonance);
        let summary: Outcome<ResonanceSummary> = fit
            .map(|f| ResonanceSummary {
                slope_user: f.slope_user,
                slope_ai: f.slope_ai,
                interaction: f.interaction,
                group_edges: f.group_edges,
                model: f.model,
            })
            .into();
        out.json(A, &format!("fit_{d}.json"), &summary).at(st)?;
        let measured = records.iter().any(|r| r.resonance_bits.is_some());
        if cfg.analyses.figures && measured {
            let svg = report::resonance_svg(&records, lines.as_ref()).at(Stage::Report)?;
            out.write(A, &format!("resonance_{d}.svg"), svg.as_bytes(), None).at(Stage::Report)?;
        }
    }
    Ok(())
}

/// Re-hashes every file listed in `out_dir/manifest.json`. Returns the
/// entries whose content no longer matches.
pub fn verify_manifest(out_dir: &Path) -> Result<(ReportBundle, Vec<String>), PipelineError> {
    let text = fs::read_to_string(out_dir.join(MANIFEST))
        .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", out_dir.join(MANIFEST).display())))?;
    let bundle: ReportBundle = serde_json::from_str(&text).at(Stage::Report)?;
    let mut bad = Vec::new();
    for f in &bundle.files {
        match fs::read(out_dir.join(&f.path)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            _ => bad.push(f.path.clone()),
        }
    }
    Ok((bundle, bad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
field = "f.jsonl"
method = "embedding"
[analyses]
infodynamics = false
[providers.surprisal]
kind = "fixed"
p = 0.25
[providers.embedder]
kind = "http"
url = "http://localhost:1"
timeout_ms = 500
"#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Embedding);
        assert!(!cfg.analyses.infodynamics && cfg.analyses.alignment);
        assert_eq!(cfg.providers.surprisal, ProviderSpec::Fixed { p: 0.25 });
        assert!(matches!(&cfg.providers.embedder, ProviderSpec::Http(e) if e.timeout_ms == 500));
        assert_eq!(cfg.providers.corrector, ProviderSpec::Identity);
        assert!(RunConfig::from_toml("feild = 1").is_err());
    }

    #[test]
    fn provider_roles_checked() {
        assert!(ProviderSpec::Echo.corrector().is_err());
        assert!(ProviderSpec::Byte.tokenizer().is_ok());
        assert!(ProviderSpec::Fixed { p: 0.0 }.surprisal().is_err());
    }

    #[test]
    fn anova_without_simulated_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.jsonl");
        fs::write(&f, "").unwrap();
        let cfg = RunConfig { field: Some(f), out_dir: dir.path().join("out"), ..RunConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("ANOVA"));
        let ok = RunConfig { analyses: Analyses { anova: false, ..Analyses::default() }, ..cfg };
        ok.validate().unwrap();
    }

    #[test]
    fn exit_codes() {
        let p = PipelineError::StageFailed {
            stage: Stage::Preprocess,
            cause: PreprocessError::Provider(ProviderError::Unavailable { attempts: vec!["timeout".into()] }).into(),
        };
        assert_eq!(p.exit_code(), 3);
        assert!(p.to_string().starts_with("preprocess stage failed"));
        let a = PipelineError::StageFailed { stage: Stage::Alignment, cause: AlignmentError::ZeroVariance("x".into()).into() };
        assert_eq!(a.exit_code(), 4);
    }
}
