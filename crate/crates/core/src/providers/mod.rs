//! Clients for the external model services, plus deterministic stubs.
//!
//! Four services are consumed: a text corrector, a sentence embedder, a
//! causal LM exposing token log-probabilities (with its tokenizer), and a
//! chat-completion model. Each is a trait here; the HTTP implementations
//! speak plain JSON and the stubs are pure functions of their input, so every
//! analysis runs offline.

mod http;
mod replay;
mod retry;
mod stub;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpChat, HttpClient, HttpCorrector, HttpEmbedder, HttpSurprisal, HttpTokenizer};
pub use replay::{RecordingSurprisal, ReplayEntry, ReplaySurprisal};
pub use retry::{with_retry, with_retry_using, RetryPolicy, Retried};
pub use stub::{
    fnv1a, BagOfWordsEmbedder, ByteTokenizer, ContextHashSurprisal, EchoChat, FixedProbability,
    HashOneHotEmbedder, IdentityCorrector, ReplaceCorrector, TableSurprisal, UnigramSurprisal,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Unavailable { attempts: Vec<String> },
    /// A failure worth retrying (transport error, timeout, 5xx, 429).
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("capability mismatch: declared {declared}, observed {observed}")]
    CapabilityMismatch { declared: String, observed: String },
    #[error("provider claims determinism but returned different outputs for the same input")]
    NonDeterministic,
    #[error("provider returned an empty response")]
    Empty,
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_) | ProviderError::Empty)
    }
}

pub type ProviderResult<T> = Result<T, ProviderError>;

/// Base of the log-probabilities a surprisal provider returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    /// Surprisal in bits of a log-probability expressed in this base.
    pub fn to_bits(self, logprob: f64) -> f64 {
        match self {
            LogBase::E => -logprob / std::f64::consts::LN_2,
            LogBase::Two => -logprob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub logprob_base: LogBase,
    #[serde(default)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub url: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Declared capabilities; when absent they are fetched from `{url}/capabilities`.
    #[serde(default)]
    pub capabilities: Option<Capabilities>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> usize {
    3
}

fn default_parallelism() -> usize {
    4
}

impl ProviderEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            auth_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            parallelism: default_parallelism(),
            capabilities: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if self.url.is_empty() {
            return Err("url is empty".into());
        }
        Ok(())
    }
}

pub trait CorrectorProvider: Send + Sync {
    fn correct(&self, text: &str) -> ProviderResult<String>;

    /// Whether identical inputs are promised to yield identical outputs.
    fn deterministic(&self) -> bool {
        true
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f64>>>;
    fn capabilities(&self) -> ProviderResult<Capabilities>;
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> ProviderResult<Vec<u32>>;
    fn detokenize(&self, ids: &[u32]) -> ProviderResult<String>;
}

pub trait SurprisalProvider: Send + Sync {
    /// Log-probability of each target token given `context` followed by the
    /// targets before it. Returned in the base declared by
    /// [`SurprisalProvider::capabilities`].
    fn logprobs(&self, context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>>;
    fn capabilities(&self) -> ProviderResult<Capabilities>;

    /// Per-target surprisal in bits.
    fn surprisal_bits(&self, context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        let base = self.capabilities()?.logprob_base;
        let lps = self.logprobs(context, targets)?;
        if lps.len() != targets.len() {
            return Err(ProviderError::Protocol(format!(
                "{} logprobs for {} targets",
                lps.len(),
                targets.len()
            )));
        }
        Ok(lps.into_iter().map(|lp| base.to_bits(lp)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self { role: role.to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> ProviderResult<String>;
}

/// Probes an embedding provider: reads its declared capabilities and checks
/// the declared dimension against an actual embedding.
pub fn probe_capabilities(provider: &dyn EmbeddingProvider) -> ProviderResult<Capabilities> {
    let caps = provider.capabilities()?;
    let observed = provider.embed(&["capability probe".to_string()])?;
    let dim = observed.first().map(Vec::len).ok_or(ProviderError::Empty)?;
    match caps.embedding_dim {
        Some(d) if d != dim => Err(ProviderError::CapabilityMismatch {
            declared: format!("dim {d}"),
            observed: format!("dim {dim}"),
        }),
        _ => Ok(Capabilities { embedding_dim: Some(dim), ..caps }),
    }
}

/// Counting semaphore capping concurrent requests to one endpoint.
pub struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Gate);

impl Gate {
    pub fn new(permits: usize) -> Self {
        Self { free: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}
