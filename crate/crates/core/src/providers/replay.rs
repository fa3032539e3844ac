//! Precomputed surprisal: a JSONL table of exact requests and their
//! log-probabilities, so infodynamics can be rerun without a live model.
//!
//! `RecordingSurprisal` wraps a live provider and captures every request;
//! `ReplaySurprisal` serves them back and fails on anything it has not seen.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Capabilities, LogBase, ProviderError, ProviderResult, SurprisalProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub context_tokens: Vec<u32>,
    pub target_tokens: Vec<u32>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplaySurprisal {
    pub base: LogBase,
    table: HashMap<(Vec<u32>, Vec<u32>), Vec<f64>>,
}

impl ReplaySurprisal {
    pub fn new(base: LogBase, entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let table = entries.into_iter().map(|e| ((e.context_tokens, e.target_tokens), e.logprobs)).collect();
        Self { base, table }
    }

    pub fn load(path: &Path, base: LogBase) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            entries.push(e);
        }
        Ok(Self::new(base, entries))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl SurprisalProvider for ReplaySurprisal {
    fn logprobs(&self, context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        self.table.get(&(context.to_vec(), targets.to_vec())).cloned().ok_or_else(|| {
            ProviderError::Protocol(format!(
                "no replay entry for {} context / {} target tokens",
                context.len(),
                targets.len()
            ))
        })
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { logprob_base: self.base, deterministic: true, ..Default::default() })
    }
}

pub struct RecordingSurprisal<P> {
    inner: P,
    log: Mutex<Vec<ReplayEntry>>,
}

impl<P: SurprisalProvider> RecordingSurprisal<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.log.lock().unwrap().clone()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in self.log.lock().unwrap().iter() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<P: SurprisalProvider> SurprisalProvider for RecordingSurprisal<P> {
    fn logprobs(&self, context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        let lps = self.inner.logprobs(context, targets)?;
        self.log.lock().unwrap().push(ReplayEntry {
            context_tokens: context.to_vec(),
            target_tokens: targets.to_vec(),
            logprobs: lps.clone(),
        });
        Ok(lps)
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        self.inner.capabilities()
    }
}
