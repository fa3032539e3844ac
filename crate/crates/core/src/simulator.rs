//! AI-AI baseline corpora: the field corpus's story/session skeleton replayed
//! with a chat model on both sides.
//!
//! Context policies:
//! - USER_SIM sees the interaction immediately before its session (if any)
//!   plus everything written so far in its own session;
//! - AI_SIM sees the whole story so far, dropping the oldest turns first when
//!   the message content exceeds `context_limit_chars`. The newest turn is
//!   always kept.
//!
//! Turns written by the role being generated are sent as `assistant`
//! messages and the other side's as `user`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Agent, Corpus, CorpusError, Dataset, Interaction, Story, Turn};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, ProviderEndpoint, ProviderError, ProviderResult};

const DEFAULT_CONFIG: &str = include_str!("../data/simulator.toml");

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("call budget of {0} exhausted")]
    BudgetExceeded(usize),
    #[error("story {story_id} turn {turn_index}: empty generation after {attempts} attempts")]
    EmptyGeneration { story_id: String, turn_index: usize, attempts: usize },
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    UserSim,
    AiSim,
}

impl Role {
    pub fn agent(self) -> Agent {
        match self {
            Role::UserSim => Agent::User,
            Role::AiSim => Agent::Ai,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub system_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: String,
    pub context_limit_chars: usize,
    pub empty_retries: usize,
    pub parallelism: usize,
    /// Total chat calls allowed; unlimited when absent.
    #[serde(default)]
    pub max_total_calls: Option<usize>,
    /// Chat service; the bearer token is read from `endpoint.auth_env`.
    #[serde(default)]
    pub endpoint: Option<ProviderEndpoint>,
    pub user_sim: GenParams,
    pub ai_sim: GenParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG).expect("bundled simulator config parses")
    }
}

impl SimConfig {
    /// Reads a TOML file; keys it leaves out keep their default values.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_overrides(&text)
    }

    pub fn from_toml_overrides(text: &str) -> Result<Self> {
        let mut base: toml::Table = toml::from_str(DEFAULT_CONFIG).expect("bundled simulator config parses");
        let over: toml::Table = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        merge(&mut base, over);
        let cfg: SimConfig = base.try_into().map_err(|e: toml::de::Error| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("user_sim", &self.user_sim), ("ai_sim", &self.ai_sim)] {
            if !(p.temperature >= 0.0) {
                return Err(SimError::Config(format!("{name}.temperature must be >= 0")));
            }
            if p.max_tokens < 1 {
                return Err(SimError::Config(format!("{name}.max_tokens must be >= 1")));
            }
        }
        if self.parallelism < 1 {
            return Err(SimError::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }

    pub fn params(&self, role: Role) -> &GenParams {
        match role {
            Role::UserSim => &self.user_sim,
            Role::AiSim => &self.ai_sim,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn message(role: Role, agent: Agent, text: &str) -> ChatMessage {
    let speaker = if agent == role.agent() { "assistant" } else { "user" };
    ChatMessage::new(speaker, text)
}

/// Messages sent to `role` for the next turn.
///
/// `history` holds the story's turns so far, in order; `session_start` is the
/// index in `history` of the first turn of the current session.
pub fn build_context(role: Role, history: &[Turn], session_start: usize, config: &SimConfig) -> Vec<ChatMessage> {
    let system = ChatMessage::new("system", config.params(role).system_prompt.clone());
    let visible: &[Turn] = match role {
        Role::UserSim => &history[session_start.saturating_sub(2)..],
        Role::AiSim => {
            let mut budget = config.context_limit_chars.saturating_sub(system.content.chars().count());
            let mut first = history.len();
            while first > 0 {
                let c = history[first - 1].char_count;
                if c > budget && first < history.len() {
                    break;
                }
                budget = budget.saturating_sub(c);
                first -= 1;
            }
            &history[first..]
        }
    };
    std::iter::once(system).chain(visible.iter().map(|t| message(role, t.agent, &t.text))).collect()
}

/// One chat call as sent and received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub story_id: String,
    pub session_id: String,
    pub turn_index: usize,
    pub role: Role,
    pub model: String,
    pub request: ChatRequest,
    pub response: String,
    pub attempts: usize,
    pub latency_ms: u64,
}

/// Counts calls against an optional budget.
#[derive(Debug, Default)]
pub struct CallBudget {
    limit: Option<usize>,
    used: AtomicUsize,
}

impl CallBudget {
    pub fn new(limit: Option<usize>) -> Self {
        Self { limit, used: AtomicUsize::new(0) }
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    fn take(&self) -> Result<()> {
        let n = self.used.fetch_add(1, Ordering::SeqCst);
        match self.limit {
            Some(limit) if n >= limit => Err(SimError::BudgetExceeded(limit)),
            _ => Ok(()),
        }
    }
}

/// Generates the turn at `history.len()` for `role`.
#[allow(clippy::too_many_arguments)]
pub fn next_turn(
    role: Role,
    story_id: &str,
    session_id: &str,
    history: &[Turn],
    session_start: usize,
    config: &SimConfig,
    client: &dyn ChatProvider,
    budget: &CallBudget,
) -> Result<(Turn, ChatExchange)> {
    let params = config.params(role);
    let request = ChatRequest {
        messages: build_context(role, history, session_start, config),
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    };
    let turn_index = history.len();
    let started = Instant::now();
    let attempts = config.empty_retries + 1;
    for attempt in 1..=attempts {
        budget.take()?;
        let text = client.complete(&request)?.trim().to_string();
        if text.is_empty() {
            log::debug!("story {story_id} turn {turn_index}: empty generation (attempt {attempt})");
            continue;
        }
        let exchange = ChatExchange {
            story_id: story_id.to_string(),
            session_id: session_id.to_string(),
            turn_index,
            role,
            model: config.model.clone(),
            request,
            response: text.clone(),
            attempts: attempt,
            latency_ms: started.elapsed().as_millis() as u64,
        };
        return Ok((Turn::new(story_id, session_id, turn_index, role.agent(), text), exchange));
    }
    Err(SimError::EmptyGeneration { story_id: story_id.to_string(), turn_index, attempts })
}

fn simulate_story(
    field: &Story,
    client: &dyn ChatProvider,
    config: &SimConfig,
    budget: &CallBudget,
) -> Result<(Story, Vec<ChatExchange>)> {
    let mut history: Vec<Turn> = Vec::with_capacity(2 * field.len());
    let mut audit = Vec::with_capacity(2 * field.len());
    for session in &field.sessions {
        let session_start = history.len();
        for _ in 0..session.length {
            for role in [Role::UserSim, Role::AiSim] {
                let (turn, ex) = next_turn(
                    role,
                    &field.story_id,
                    &session.session_id,
                    &history,
                    session_start,
                    config,
                    client,
                    budget,
                )?;
                history.push(turn);
                audit.push(ex);
            }
        }
    }
    let mut turns = history.into_iter();
    let mut interactions = Vec::with_capacity(field.len());
    while let (Some(user_turn), Some(ai_turn)) = (turns.next(), turns.next()) {
        interactions.push(Interaction { interaction_index: interactions.len(), user_turn, ai_turn });
    }
    Ok((Story::new(field.story_id.clone(), Dataset::Simulated, field.genre, interactions), audit))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub corpus: Corpus,
    /// Exchanges in story order, then turn order.
    pub audit: Vec<ChatExchange>,
    pub calls: usize,
}

/// Mirrors every field story: same ids, same sessions, same number of
/// interactions per session.
pub fn simulate_dataset(field: &Corpus, client: &dyn ChatProvider, config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let budget = CallBudget::new(config.max_total_calls);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let results: Vec<(Story, Vec<ChatExchange>)> = pool.install(|| {
        field.stories.par_iter().map(|s| simulate_story(s, client, config, &budget)).collect::<Result<_>>()
    })?;
    let mut stories = Vec::with_capacity(results.len());
    let mut audit = Vec::new();
    for (s, a) in results {
        stories.push(s);
        audit.extend(a);
    }
    let mut corpus = Corpus::new(Dataset::Simulated, stories)?;
    corpus.provenance = field.provenance.clone();
    Ok(Simulation { corpus, audit, calls: budget.used() })
}

/// Appends exchanges as JSON lines; never truncates.
pub fn append_audit(path: &Path, exchanges: &[ChatExchange]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for e in exchanges {
        serde_json::to_writer(&mut f, e).map_err(std::io::Error::from)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_audit(path: &Path) -> Result<Vec<ChatExchange>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?).map_err(std::io::Error::from)?))
        .collect()
}

/// Serves responses recorded in an audit log, keyed by the exact request.
#[derive(Debug, Default)]
pub struct ReplayChat {
    responses: Mutex<HashMap<String, String>>,
}

impl ReplayChat {
    pub fn new(exchanges: &[ChatExchange]) -> Self {
        let map = exchanges
            .iter()
            .map(|e| (serde_json::to_string(&e.request).expect("request serializes"), e.response.clone()))
            .collect();
        Self { responses: Mutex::new(map) }
    }
}

impl ChatProvider for ReplayChat {
    fn complete(&self, request: &ChatRequest) -> ProviderResult<String> {
        let key = serde_json::to_string(request).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        self.responses
            .lock()
            .unwrap()
            .get(&key)
            .cloned()
            .ok_or_else(|| ProviderError::Protocol("request not present in audit log".into()))
    }
}
