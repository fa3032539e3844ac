//! Offline providers. Each is a pure function of its input.

use super::{
    Capabilities, ChatProvider, ChatRequest, CorrectorProvider, EmbeddingProvider, LogBase, ProviderError,
    ProviderResult, SurprisalProvider, Tokenizer,
};

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCorrector;

impl CorrectorProvider for IdentityCorrector {
    fn correct(&self, text: &str) -> ProviderResult<String> {
        Ok(text.to_string())
    }
}

/// Applies literal substring replacements in order.
#[derive(Debug, Clone, Default)]
pub struct ReplaceCorrector {
    pub replacements: Vec<(String, String)>,
}

impl ReplaceCorrector {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self { replacements: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect() }
    }
}

impl CorrectorProvider for ReplaceCorrector {
    fn correct(&self, text: &str) -> ProviderResult<String> {
        Ok(self.replacements.iter().fold(text.to_string(), |acc, (from, to)| acc.replace(from, to)))
    }
}

/// One-hot vector at `fnv1a(text) mod dim`.
#[derive(Debug, Clone, Copy)]
pub struct HashOneHotEmbedder {
    pub dim: usize,
}

impl HashOneHotEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn slot(&self, text: &str) -> usize {
        (fnv1a(text.as_bytes()) % self.dim as u64) as usize
    }
}

impl EmbeddingProvider for HashOneHotEmbedder {
    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; self.dim];
                v[self.slot(t)] = 1.0;
                v
            })
            .collect())
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { embedding_dim: Some(self.dim), deterministic: true, ..Default::default() })
    }
}

/// Signed feature hashing of lowercase words, L2-normalized. Texts that
/// share words get similar vectors, which makes offline pipeline runs less
/// degenerate than one-hot vectors.
#[derive(Debug, Clone, Copy)]
pub struct BagOfWordsEmbedder {
    pub dim: usize,
}

impl BagOfWordsEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let h = fnv1a(word.to_lowercase().as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v[0] = 1.0;
        }
        v
    }
}

impl EmbeddingProvider for BagOfWordsEmbedder {
    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { embedding_dim: Some(self.dim), deterministic: true, ..Default::default() })
    }
}

/// UTF-8 bytes as token ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn tokenize(&self, text: &str) -> ProviderResult<Vec<u32>> {
        Ok(text.bytes().map(u32::from).collect())
    }

    fn detokenize(&self, ids: &[u32]) -> ProviderResult<String> {
        let bytes = ids
            .iter()
            .map(|&i| u8::try_from(i).map_err(|_| ProviderError::Protocol(format!("token {i} is not a byte"))))
            .collect::<Result<Vec<u8>, _>>()?;
        String::from_utf8(bytes).map_err(|e| ProviderError::Protocol(e.to_string()))
    }
}

/// Every target token has probability `p`.
#[derive(Debug, Clone, Copy)]
pub struct FixedProbability {
    pub p: f64,
    pub base: LogBase,
}

impl FixedProbability {
    pub fn new(p: f64) -> Self {
        Self { p, base: LogBase::E }
    }

    pub fn with_base(p: f64, base: LogBase) -> Self {
        Self { p, base }
    }

    fn logp(&self, p: f64) -> f64 {
        match self.base {
            LogBase::E => p.ln(),
            LogBase::Two => p.log2(),
        }
    }
}

impl SurprisalProvider for FixedProbability {
    fn logprobs(&self, _context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        Ok(vec![self.logp(self.p); targets.len()])
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { logprob_base: self.base, deterministic: true, ..Default::default() })
    }
}

/// Probabilities taken from a table, cycling over target position.
#[derive(Debug, Clone)]
pub struct TableSurprisal {
    pub probabilities: Vec<f64>,
}

impl SurprisalProvider for TableSurprisal {
    fn logprobs(&self, _context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        if self.probabilities.is_empty() {
            return Err(ProviderError::Protocol("empty probability table".into()));
        }
        Ok((0..targets.len()).map(|i| self.probabilities[i % self.probabilities.len()].ln()).collect())
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { logprob_base: LogBase::E, deterministic: true, ..Default::default() })
    }
}

/// Memoryless: the probability depends only on the token id, between
/// 1/2 and 1/256 (1 to 8 bits).
#[derive(Debug, Clone, Copy, Default)]
pub struct UnigramSurprisal;

impl UnigramSurprisal {
    pub fn probability(token: u32) -> f64 {
        let bits = 1.0 + (fnv1a(&token.to_le_bytes()) % 7001) as f64 / 1000.0;
        (-bits).exp2()
    }
}

impl SurprisalProvider for UnigramSurprisal {
    fn logprobs(&self, _context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        Ok(targets.iter().map(|&t| Self::probability(t).log2()).collect())
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { logprob_base: LogBase::Two, deterministic: true, ..Default::default() })
    }
}

/// Probability of each target depends on the whole conditioning prefix
/// (context plus earlier targets), hashed. Used to check that callers pass
/// exactly the context they claim to.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContextHashSurprisal;

impl SurprisalProvider for ContextHashSurprisal {
    fn logprobs(&self, context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        let mut prefix: Vec<u8> = context.iter().flat_map(|t| t.to_le_bytes()).collect();
        let mut out = Vec::with_capacity(targets.len());
        for &t in targets {
            let mut key = prefix.clone();
            key.extend_from_slice(&t.to_le_bytes());
            let bits = 0.5 + (fnv1a(&key) % 9000) as f64 / 1000.0;
            out.push(-bits);
            prefix.extend_from_slice(&t.to_le_bytes());
        }
        Ok(out)
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        Ok(Capabilities { logprob_base: LogBase::Two, deterministic: true, ..Default::default() })
    }
}

/// Echoes the last message back, truncated to `max_tokens` words and tagged
/// with the conversation length.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoChat;

impl ChatProvider for EchoChat {
    fn complete(&self, request: &ChatRequest) -> ProviderResult<String> {
        let last = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let words: Vec<&str> = last.split_whitespace().take(request.max_tokens.max(1)).collect();
        Ok(format!("[{}] {}", request.messages.len(), words.join(" ")).trim_end().to_string())
    }
}
