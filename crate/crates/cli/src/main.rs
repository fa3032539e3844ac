//! `dyadkit`: command-line front end for the dyadic story analyses.
//!
//! Exit codes: 0 success, 2 configuration error, 3 provider error,
//! 4 analysis error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dyadkit_core::corpus::{load_transcripts, validate_corpus, write_transcripts, Corpus, Dataset, LoadOptions};
use dyadkit_core::exploration::{exploration_rows, write_rows_csv};
use dyadkit_core::infodynamics::write_records_csv;
use dyadkit_core::pipeline::{
    apply_corrections, run_pipeline, verify_manifest, Analyses, PipelineError, ProviderSpec, RunConfig,
};
use dyadkit_core::preprocess::{filter_by_edit_distance, rectify_corpus, DEFAULT_EDIT_THRESHOLD};
use dyadkit_core::providers::{ChatProvider, EchoChat, HttpChat, HttpClient, ProviderEndpoint};
use dyadkit_core::sentiment::{
    default_seed_words, score_corpus_lexicon, score_embeddings, seed_centroids, valence_table, write_valence_csv,
    Lexicon, Method,
};
use dyadkit_core::simulator::{append_audit, simulate_dataset, SimConfig, SimError};
use dyadkit_core::synthbench::{
    gen_corpus, gen_coupled_dyad, gen_mean_reverting_gaps, gen_resonance_records, gen_walk_stories, CorpusSpec,
    DyadSpec, GapSpec, Leader, ResonanceSpec, WalkMode, WalkStoriesSpec,
};

#[derive(Parser)]
#[command(name = "dyadkit", version, about = "Alignment, exploration and information dynamics in co-written stories")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Field,
    Simulated,
}

impl From<DatasetArg> for Dataset {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Field => Dataset::Field,
            DatasetArg::Simulated => Dataset::Simulated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lexicon,
    Embedding,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lexicon => Method::Lexicon,
            MethodArg::Embedding => Method::Embedding,
        }
    }
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Transcript file (JSON lines).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "field")]
    dataset: DatasetArg,
    /// Drop a final user turn that never got a reply.
    #[arg(long)]
    drop_trailing_user_turn: bool,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus, Fail> {
        let opts = LoadOptions { drop_trailing_user_turn: self.drop_trailing_user_turn };
        load_transcripts(&self.input, self.dataset.into(), opts).map_err(Fail::analysis)
    }
}

#[derive(Args, Clone, Default)]
struct CorrectorArgs {
    /// HTTP corrector; the identity corrector is used when absent.
    #[arg(long)]
    corrector_url: Option<String>,
    #[arg(long)]
    corrector_timeout_ms: Option<u64>,
}

impl CorrectorArgs {
    fn apply(&self, spec: &mut ProviderSpec) {
        if let Some(url) = &self.corrector_url {
            *spec = ProviderSpec::Http(ProviderEndpoint::new(url.clone()));
        }
        if let (Some(ms), ProviderSpec::Http(e)) = (self.corrector_timeout_ms, spec) {
            e.timeout_ms = ms;
        }
    }
}

/// Flags shared by the analysis commands; they override the config file.
#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    simulated: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    edit_threshold: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Skip rectification and filtering.
    #[arg(long)]
    no_preprocess: bool,
    /// Skip the dataset × direction ANOVA (allows a field-only run).
    #[arg(long)]
    no_anova: bool,
    #[arg(long)]
    no_figures: bool,
    #[command(flatten)]
    corrector: CorrectorArgs,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Fail> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(Fail::pipeline)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.field {
            cfg.field = Some(v.clone());
        }
        if let Some(v) = &self.simulated {
            cfg.simulated = Some(v.clone());
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.method = self.method.map(Method::from).unwrap_or(cfg.method);
        cfg.edit_threshold = self.edit_threshold.unwrap_or(cfg.edit_threshold);
        cfg.window = self.window.unwrap_or(cfg.window);
        cfg.parallelism = self.parallelism.unwrap_or(cfg.parallelism);
        cfg.preprocess &= !self.no_preprocess;
        cfg.analyses.anova &= !self.no_anova;
        cfg.analyses.figures &= !self.no_figures;
        self.corrector.apply(&mut cfg.providers.corrector);
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Transcript fixture (JSON lines).
    Corpus,
    /// Valence gaps with the AI following the user.
    Coupled,
    /// Centroid-distance rows for walk (field) vs i.i.d. (simulated) stories.
    Walk,
    /// Surprisal records with known resonance slopes.
    Resonance,
    /// Valence gaps with mean-reverting stage changes.
    Gaps,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a transcript file; prints a JSON summary.
    Ingest(CorpusArgs),
    /// Rectify user turns and drop heavily corrected interactions.
    Preprocess {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Filtered transcript output.
        #[arg(long)]
        out: PathBuf,
        /// Exclusion log (JSON); next to the output by default.
        #[arg(long)]
        exclusions: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EDIT_THRESHOLD)]
        threshold: usize,
        /// Keep the original user text instead of the corrected one.
        #[arg(long)]
        keep_original_text: bool,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[command(flatten)]
        corrector: CorrectorArgs,
    },
    /// Score every turn and write the per-interaction valence table (CSV).
    Sentiment {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "lexicon")]
        method: MethodArg,
        /// Lexicon directory (lexicon.tsv, negators.txt, intensifiers.tsv, suffixes.txt).
        #[arg(long)]
        lexicon_dir: Option<PathBuf>,
        /// Embedding service for `--method embedding`.
        #[arg(long)]
        embedder_url: Option<String>,
    },
    /// Valence alignment, ANOVA and rubber-band analysis.
    Align(RunArgs),
    /// Semantic exploration over bin sizes.
    Explore(RunArgs),
    /// Novelty, transience and resonance.
    Infodyn(RunArgs),
    /// Regenerate a field corpus with a chat model on both sides.
    Simulate {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Simulator settings (TOML); keys left out keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the offline echo stub instead of a chat service.
        #[arg(long)]
        dry_run: bool,
        /// Append-only call log; `<out>.audit.jsonl` by default.
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long)]
        chat_url: Option<String>,
    },
    /// Check a finished run's files against its manifest.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Every enabled stage.
    All(RunArgs),
    /// Write a synthetic data set with known structure.
    Synthbench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Fail {
    code: u8,
    message: String,
}

impl Fail {
    fn config(m: impl std::fmt::Display) -> Self {
        Fail { code: 2, message: m.to_string() }
    }

    fn provider(m: impl std::fmt::Display) -> Self {
        Fail { code: 3, message: m.to_string() }
    }

    fn analysis(m: impl std::fmt::Display) -> Self {
        Fail { code: 4, message: m.to_string() }
    }

    fn pipeline(e: PipelineError) -> Self {
        Fail { code: e.exit_code() as u8, message: e.to_string() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Fail::config(format!("{}: {e}", path.display()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Fail> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Fail::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Fail::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_with(args: &RunArgs, analyses: Option<Analyses>) -> Result<(), Fail> {
    let mut cfg = args.config()?;
    if let Some(a) = analyses {
        cfg.analyses = Analyses { anova: cfg.analyses.anova, figures: cfg.analyses.figures, rubber_band: cfg.analyses.rubber_band, ..a };
    }
    let bundle = run_pipeline(&cfg).map_err(Fail::pipeline)?;
    for f in &bundle.files {
        println!("{}  {}", f.sha256, f.path);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Fail> {
    let none = Analyses { alignment: false, exploration: false, infodynamics: false, ..Analyses::default() };
    match cli.command {
        Command::Ingest(args) => {
            let corpus = args.load()?;
            let report = validate_corpus(&corpus);
            let summary = serde_json::json!({
                "dataset": corpus.dataset,
                "stories": corpus.stories.len(),
                "sessions": corpus.session_count(),
                "interactions": corpus.interaction_count(),
                "issues": report.totals(),
                "clean": report.is_clean(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("json value serializes"));
            Ok(())
        }
        Command::Preprocess { corpus, out, exclusions, threshold, keep_original_text, parallelism, corrector } => {
            let c = corpus.load()?;
            let mut spec = ProviderSpec::Identity;
            corrector.apply(&mut spec);
            let provider = spec.corrector().map_err(Fail::pipeline)?;
            let map = rectify_corpus(&c, provider.as_ref(), parallelism).map_err(|e| match e {
                dyadkit_core::preprocess::PreprocessError::Provider(p) => Fail::provider(p),
                other => Fail::analysis(other),
            })?;
            let filtered = filter_by_edit_distance(&c, &map, threshold).map_err(Fail::analysis)?;
            let kept = if keep_original_text {
                filtered.corpus.clone()
            } else {
                apply_corrections(&filtered.corpus, &filtered.rectified)
            };
            let mut w = create(&out)?;
            write_transcripts(&kept, &mut w).and_then(|_| w.flush()).map_err(|e| Fail::io(&out, e))?;
            let log_path = exclusions.unwrap_or_else(|| with_suffix(&out, ".exclusions.json"));
            let mut w = create(&log_path)?;
            serde_json::to_writer_pretty(&mut w, &filtered.log).map_err(|e| Fail::io(&log_path, e.into()))?;
            w.flush().map_err(|e| Fail::io(&log_path, e))?;
            eprintln!("kept {} of {} interactions", filtered.log.after, filtered.log.before);
            Ok(())
        }
        Command::Sentiment { corpus, out, method, lexicon_dir, embedder_url } => {
            let c = corpus.load()?;
            let valences = match Method::from(method) {
                Method::Lexicon => {
                    let lex = match lexicon_dir {
                        Some(d) => Lexicon::load_dir(&d).map_err(Fail::config)?,
                        None => Lexicon::danish_default(),
                    };
                    score_corpus_lexicon(&c, &lex)
                }
                Method::Embedding => {
                    let spec = match embedder_url {
                        Some(url) => ProviderSpec::Http(ProviderEndpoint::new(url)),
                        None => ProviderSpec::BagOfWords { dim: 64 },
                    };
                    let provider = spec.embedder().map_err(Fail::pipeline)?;
                    let (pos, neg) = default_seed_words();
                    let centroids = seed_centroids(&pos, &neg, provider.as_ref()).map_err(Fail::provider)?;
                    let turns: Vec<_> =
                        c.stories.iter().flat_map(|s| s.interactions.iter().flat_map(|i| [&i.user_turn, &i.ai_turn])).collect();
                    let emb = dyadkit_core::exploration::embed_turns(&turns, provider.as_ref(), 32, 4)
                        .map_err(Fail::provider)?;
                    score_embeddings(&dyadkit_core::exploration::to_map(emb), &centroids).map_err(Fail::analysis)?
                }
            };
            let rows = valence_table(&c, &valences).map_err(Fail::analysis)?;
            write_valence_csv(&rows, create(&out)?).map_err(|e| Fail::io(&out, e.into()))?;
            Ok(())
        }
        Command::Align(args) => run_with(&args, Some(Analyses { alignment: true, ..none })),
        Command::Explore(args) => run_with(&args, Some(Analyses { exploration: true, ..none })),
        Command::Infodyn(args) => run_with(&args, Some(Analyses { infodynamics: true, ..none })),
        Command::All(args) => run_with(&args, None),
        Command::Simulate { field, out, config, dry_run, audit, chat_url } => {
            let cfg = match &config {
                Some(p) => SimConfig::load(p),
                None => Ok(SimConfig::default()),
            }
            .map_err(Fail::config)?;
            let field = load_transcripts(&field, Dataset::Field, LoadOptions::default()).map_err(Fail::analysis)?;
            let client: Box<dyn ChatProvider> = if dry_run {
                Box::new(EchoChat)
            } else {
                let endpoint = match (chat_url, &cfg.endpoint) {
                    (Some(url), _) => ProviderEndpoint::new(url),
                    (None, Some(e)) => e.clone(),
                    (None, None) => return Err(Fail::config("no chat endpoint: pass --chat-url, set [endpoint] or use --dry-run")),
                };
                Box::new(HttpChat(HttpClient::new(endpoint).map_err(Fail::config)?))
            };
            let sim = simulate_dataset(&field, client.as_ref(), &cfg).map_err(|e| match e {
                SimError::Provider(_) | SimError::BudgetExceeded(_) | SimError::EmptyGeneration { .. } => Fail::provider(e),
                SimError::Config(_) => Fail::config(e),
                other => Fail::analysis(other),
            })?;
            let mut w = create(&out)?;
            write_transcripts(&sim.corpus, &mut w).and_then(|_| w.flush()).map_err(|e| Fail::io(&out, e))?;
            let audit = audit.unwrap_or_else(|| with_suffix(&out, ".audit.jsonl"));
            append_audit(&audit, &sim.audit).map_err(Fail::config)?;
            eprintln!("{} interactions in {} stories, {} calls", sim.corpus.interaction_count(), sim.corpus.stories.len(), sim.calls);
            Ok(())
        }
        Command::Report { out_dir } => {
            let (bundle, bad) = verify_manifest(&out_dir).map_err(Fail::pipeline)?;
            for f in &bundle.files {
                let status = if bad.contains(&f.path) { "MISMATCH" } else { "ok" };
                println!("{status:8} {}", f.path);
            }
            if bad.is_empty() {
                Ok(())
            } else {
                Err(Fail::analysis(format!("{} file(s) differ from the manifest", bad.len())))
            }
        }
        Command::Synthbench { suite, seed, out } => synthbench(suite, seed, &out),
    }
}

fn synthbench(suite: Suite, seed: u64, out: &Path) -> Result<(), Fail> {
    let w = create(out)?;
    let io = |e: std::io::Error| Fail::io(out, e);
    match suite {
        Suite::Corpus => {
            let mut w = w;
            write_transcripts(&gen_corpus(&CorpusSpec::default(), seed), &mut w).and_then(|_| w.flush()).map_err(io)
        }
        Suite::Coupled => {
            let rows = gen_coupled_dyad(&DyadSpec::new(27, 50, 0.8, 1.0, Leader::User), seed);
            write_valence_csv(&rows, w).map_err(|e| io(e.into()))
        }
        Suite::Gaps => {
            let rows = gen_mean_reverting_gaps(&GapSpec::new(500, -0.7, 0.1), seed);
            write_valence_csv(&rows, w).map_err(|e| io(e.into()))
        }
        Suite::Walk => {
            let mut stories = Vec::new();
            for (mode, dataset, k) in [(WalkMode::Walk, Dataset::Field, 1u64), (WalkMode::Iid, Dataset::Simulated, 2)] {
                let spec = WalkStoriesSpec { n_stories: 27, n_turns: 60, dim: 16, sigma: 1.0, origin_sd: 1.0, mode, dataset };
                stories.extend(gen_walk_stories(&spec, seed.wrapping_add(k)));
            }
            let rows = exploration_rows(&stories, None).map_err(Fail::analysis)?;
            write_rows_csv(&rows, w).map_err(|e| io(e.into()))
        }
        Suite::Resonance => {
            let records = gen_resonance_records(&ResonanceSpec::new(2000, 0.973, 0.842, 0.3), seed);
            write_records_csv(&records, w).map_err(|e| io(e.into()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
