//! Dyadic transcript model and line-delimited ingestion.
//!
//! A transcript file holds one JSON object per line with the fields
//! `story_id`, `session_id`, `turn_index`, `agent` (`"user"` or `"ai"`, any
//! case) and `text`, plus optional `genre` and `timestamp`. Within a story the
//! agents alternate starting with the user; each user turn and the AI turn
//! that follows it form one interaction, and consecutive interactions that
//! share a session id form one session.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum user input length enforced by the writing platform.
pub const MIN_USER_CHARS: usize = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("story {story_id}: turn {turn_index} breaks user/ai alternation")]
    AlternationViolation { story_id: String, turn_index: usize },
    #[error("story {story_id}: user turn {turn_index} has no ai reply")]
    OrphanTurn { story_id: String, turn_index: usize },
    #[error("story {story_id}: expected turn_index {expected}, found {found}")]
    NonContiguous { story_id: String, expected: usize, found: usize },
    #[error("story {story_id}: session {session_id} is not contiguous")]
    SessionSplit { story_id: String, session_id: String },
    #[error("session {session_id} appears in more than one story")]
    DuplicateSession { session_id: String },
    #[error("story {story_id} carries dataset {found}, corpus is {expected}")]
    DatasetMismatch { story_id: String, expected: Dataset, found: Dataset },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    User,
    Ai,
}

impl Agent {
    pub fn as_str(self) -> &'static str {
        match self {
            Agent::User => "user",
            Agent::Ai => "ai",
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Agent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "user" => Ok(Agent::User),
            "ai" => Ok(Agent::Ai),
            other => Err(format!("unknown agent `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Field,
    Simulated,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Field => "field",
            Dataset::Simulated => "simulated",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "field" => Ok(Dataset::Field),
            "simulated" | "sim" => Ok(Dataset::Simulated),
            other => Err(format!("unknown dataset `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Cartoon,
    Fantasy,
    Scifi,
    #[default]
    Unknown,
}

impl FromStr for Genre {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "cartoon" => Genre::Cartoon,
            "fantasy" => Genre::Fantasy,
            "scifi" | "sci-fi" | "science fiction" => Genre::Scifi,
            _ => Genre::Unknown,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub story_id: String,
    pub session_id: String,
    pub turn_index: usize,
    pub agent: Agent,
    pub text: String,
    pub char_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl Turn {
    pub fn new(
        story_id: impl Into<String>,
        session_id: impl Into<String>,
        turn_index: usize,
        agent: Agent,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        Self {
            story_id: story_id.into(),
            session_id: session_id.into(),
            turn_index,
            agent,
            char_count: text.chars().count(),
            text,
            timestamp: None,
        }
    }

    pub fn key(&self) -> TurnKey {
        TurnKey { story_id: self.story_id.clone(), turn_index: self.turn_index }
    }
}

/// Identifies a turn within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TurnKey {
    pub story_id: String,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub interaction_index: usize,
    pub user_turn: Turn,
    pub ai_turn: Turn,
}

impl Interaction {
    pub fn session_id(&self) -> &str {
        &self.user_turn.session_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub story_id: String,
    /// Index of the session's first interaction within the story.
    pub start: usize,
    pub length: usize,
}

impl Session {
    pub fn interaction_indices(&self) -> Range<usize> {
        self.start..self.start + self.length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: String,
    pub dataset: Dataset,
    pub genre: Genre,
    pub interactions: Vec<Interaction>,
    pub sessions: Vec<Session>,
}

impl Story {
    /// Builds a story from ordered interactions, deriving the sessions from
    /// runs of equal user-turn session ids.
    pub fn new(story_id: impl Into<String>, dataset: Dataset, genre: Genre, interactions: Vec<Interaction>) -> Self {
        let story_id = story_id.into();
        let sessions = derive_sessions(&story_id, &interactions);
        Self { story_id, dataset, genre, interactions, sessions }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// All turns in story order.
    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.interactions.iter().flat_map(|i| [&i.user_turn, &i.ai_turn])
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.interactions.iter().map(|i| &i.user_turn)
    }

    pub fn session_interactions(&self, session: &Session) -> &[Interaction] {
        &self.interactions[session.interaction_indices()]
    }
}

fn derive_sessions(story_id: &str, interactions: &[Interaction]) -> Vec<Session> {
    let mut sessions: Vec<Session> = Vec::new();
    for (i, inter) in interactions.iter().enumerate() {
        match sessions.last_mut() {
            Some(s) if s.session_id == inter.session_id() => s.length += 1,
            _ => sessions.push(Session {
                session_id: inter.session_id().to_string(),
                story_id: story_id.to_string(),
                start: i,
                length: 1,
            }),
        }
    }
    sessions
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Option<PathBuf>,
    /// Seconds since the Unix epoch.
    pub ingested_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub dataset: Dataset,
    pub stories: Vec<Story>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn new(dataset: Dataset, stories: Vec<Story>) -> Result<Self, CorpusError> {
        for s in &stories {
            if s.dataset != dataset {
                return Err(CorpusError::DatasetMismatch {
                    story_id: s.story_id.clone(),
                    expected: dataset,
                    found: s.dataset,
                });
            }
        }
        Ok(Self { dataset, stories, provenance: Provenance::default() })
    }

    pub fn empty(dataset: Dataset) -> Self {
        Self { dataset, stories: Vec::new(), provenance: Provenance::default() }
    }

    pub fn interaction_count(&self) -> usize {
        self.stories.iter().map(Story::len).sum()
    }

    pub fn session_count(&self) -> usize {
        self.stories.iter().map(|s| s.sessions.len()).sum()
    }

    pub fn story(&self, story_id: &str) -> Option<&Story> {
        self.stories.iter().find(|s| s.story_id == story_id)
    }

    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.stories.iter().flat_map(Story::turns)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop a story's final user turn when it has no AI reply instead of
    /// failing with [`CorpusError::OrphanTurn`].
    pub drop_trailing_user_turn: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    story_id: String,
    session_id: String,
    turn_index: usize,
    agent: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    genre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<String>,
}

pub fn load_transcripts(path: &Path, dataset: Dataset, options: LoadOptions) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let mut corpus = parse_transcripts(file, dataset, options)?;
    corpus.provenance = Provenance {
        source: Some(path.to_path_buf()),
        ingested_at: SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs()),
    };
    Ok(corpus)
}

pub fn parse_transcripts<R: Read>(reader: R, dataset: Dataset, options: LoadOptions) -> Result<Corpus, CorpusError> {
    let mut by_story: BTreeMap<String, Vec<(usize, Record)>> = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::MalformedRecord { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedRecord { line: line_no, message: e.to_string() })?;
        Agent::from_str(&rec.agent).map_err(|message| CorpusError::MalformedRecord { line: line_no, message })?;
        by_story.entry(rec.story_id.clone()).or_default().push((line_no, rec));
    }

    let mut stories = Vec::with_capacity(by_story.len());
    let mut seen_sessions: HashMap<String, String> = HashMap::new();
    for (story_id, mut records) in by_story {
        records.sort_by_key(|(_, r)| r.turn_index);
        let story = build_story(&story_id, dataset, records, options)?;
        for s in &story.sessions {
            match seen_sessions.get(&s.session_id) {
                Some(other) if other != &story_id => {
                    return Err(CorpusError::DuplicateSession { session_id: s.session_id.clone() })
                }
                _ => {
                    seen_sessions.insert(s.session_id.clone(), story_id.clone());
                }
            }
        }
        stories.push(story);
    }
    Corpus::new(dataset, stories)
}

fn build_story(
    story_id: &str,
    dataset: Dataset,
    records: Vec<(usize, Record)>,
    options: LoadOptions,
) -> Result<Story, CorpusError> {
    let genre = records
        .iter()
        .find_map(|(_, r)| r.genre.as_deref())
        .map(|g| Genre::from_str(g).unwrap_or_default())
        .unwrap_or_default();

    let mut turns = Vec::with_capacity(records.len());
    for (expected, (line, rec)) in records.into_iter().enumerate() {
        if rec.turn_index != expected {
            return Err(CorpusError::NonContiguous { story_id: story_id.to_string(), expected, found: rec.turn_index });
        }
        let agent = Agent::from_str(&rec.agent).map_err(|message| CorpusError::MalformedRecord { line, message })?;
        let mut turn = Turn::new(rec.story_id, rec.session_id, rec.turn_index, agent, rec.text);
        turn.timestamp = rec.timestamp;
        turns.push((line, turn));
    }

    let mut interactions = Vec::with_capacity(turns.len() / 2);
    let mut it = turns.into_iter().peekable();
    while let Some((_, user)) = it.next() {
        if user.agent != Agent::User {
            return Err(CorpusError::AlternationViolation { story_id: story_id.to_string(), turn_index: user.turn_index });
        }
        match it.next() {
            Some((ai_line, ai)) if ai.agent == Agent::Ai => {
                if ai.session_id != user.session_id {
                    return Err(CorpusError::MalformedRecord {
                        line: ai_line,
                        message: format!(
                            "story {story_id}: ai turn {} has session {} but answers session {}",
                            ai.turn_index, ai.session_id, user.session_id
                        ),
                    });
                }
                interactions.push(Interaction { interaction_index: interactions.len(), user_turn: user, ai_turn: ai });
            }
            Some(_) => {
                return Err(CorpusError::OrphanTurn { story_id: story_id.to_string(), turn_index: user.turn_index })
            }
            None if options.drop_trailing_user_turn => break,
            None => {
                return Err(CorpusError::OrphanTurn { story_id: story_id.to_string(), turn_index: user.turn_index })
            }
        }
    }

    let story = Story::new(story_id, dataset, genre, interactions);
    let mut seen = HashSet::new();
    for s in &story.sessions {
        if !seen.insert(s.session_id.as_str()) {
            return Err(CorpusError::SessionSplit { story_id: story_id.to_string(), session_id: s.session_id.clone() });
        }
    }
    Ok(story)
}

/// Writes the corpus back out in the transcript line format.
pub fn write_transcripts<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for story in &corpus.stories {
        let genre = match story.genre {
            Genre::Unknown => None,
            g => Some(serde_json::to_value(g).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()),
        };
        for t in story.turns() {
            let rec = Record {
                story_id: t.story_id.clone(),
                session_id: t.session_id.clone(),
                turn_index: t.turn_index,
                agent: t.agent.as_str().to_string(),
                text: t.text.clone(),
                genre: genre.clone(),
                timestamp: t.timestamp.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryValidation {
    pub story_id: String,
    /// Non-empty user turns shorter than [`MIN_USER_CHARS`]; a warning only.
    pub under_length: usize,
    pub empty: usize,
    pub alternation: usize,
}

impl StoryValidation {
    pub fn total(&self) -> usize {
        self.under_length + self.empty + self.alternation
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub stories: Vec<StoryValidation>,
}

impl ValidationReport {
    pub fn totals(&self) -> StoryValidation {
        let mut t = StoryValidation { story_id: "*".into(), ..Default::default() };
        for s in &self.stories {
            t.under_length += s.under_length;
            t.empty += s.empty;
            t.alternation += s.alternation;
        }
        t
    }

    pub fn is_clean(&self) -> bool {
        self.stories.iter().all(|s| s.total() == 0)
    }
}

pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let stories = corpus
        .stories
        .iter()
        .map(|story| {
            let mut v = StoryValidation { story_id: story.story_id.clone(), ..Default::default() };
            for (i, inter) in story.interactions.iter().enumerate() {
                let u = &inter.user_turn;
                let a = &inter.ai_turn;
                if u.text.trim().is_empty() {
                    v.empty += 1;
                } else if u.char_count < MIN_USER_CHARS {
                    v.under_length += 1;
                }
                if a.text.trim().is_empty() {
                    v.empty += 1;
                }
                let ordered = u.agent == Agent::User
                    && a.agent == Agent::Ai
                    && u.turn_index == 2 * i
                    && a.turn_index == u.turn_index + 1
                    && u.story_id == a.story_id;
                if !ordered {
                    v.alternation += 1;
                }
            }
            v
        })
        .collect();
    ValidationReport { stories }
}

/// Interactions per session, keyed by session id.
pub fn session_lengths(corpus: &Corpus) -> BTreeMap<String, usize> {
    corpus
        .stories
        .iter()
        .flat_map(|s| s.sessions.iter())
        .map(|s| (s.session_id.clone(), s.length))
        .collect()
}
