//! Plain HTTP+JSON clients.
//!
//! Wire contracts (all `POST` with a JSON body to the endpoint URL):
//!
//! | service    | request                                   | response              |
//! |------------|-------------------------------------------|-----------------------|
//! | corrector  | `{text}`                                  | `{corrected_text}`    |
//! | embedding  | `{texts: [..]}`                           | `{vectors: [[..]]}`   |
//! | tokenizer  | `{text}` / `{tokens: [..]}`               | `{tokens}` / `{text}` |
//! | surprisal  | `{context_tokens, target_tokens}`         | `{logprobs: [..]}`    |
//! | chat       | `{messages, temperature, max_tokens}`     | `{text}`              |
//!
//! Capabilities come from the endpoint config when declared there, otherwise
//! from `GET {url}/capabilities`, fetched once per client.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    with_retry, Capabilities, ChatProvider, ChatRequest, CorrectorProvider, EmbeddingProvider, Gate,
    ProviderEndpoint, ProviderError, ProviderResult, RetryPolicy, SurprisalProvider, Tokenizer,
};

pub struct HttpClient {
    endpoint: ProviderEndpoint,
    agent: ureq::Agent,
    gate: Gate,
    policy: RetryPolicy,
    calls: AtomicUsize,
    caps: OnceLock<Capabilities>,
}

impl HttpClient {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, String> {
        endpoint.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build();
        let policy = RetryPolicy { max_retries: endpoint.max_retries, ..RetryPolicy::default() };
        Ok(Self {
            gate: Gate::new(endpoint.parallelism),
            agent: config.into(),
            policy,
            calls: AtomicUsize::new(0),
            caps: OnceLock::new(),
            endpoint,
        })
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    /// Requests sent so far, retries included.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn auth_header(&self) -> Option<String> {
        let var = self.endpoint.auth_env.as_deref()?;
        std::env::var(var).ok().map(|token| format!("Bearer {token}"))
    }

    fn read<T: DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> ProviderResult<T> {
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Protocol(format!("HTTP {status}: {body}")));
        }
        resp.body_mut().read_json::<T>().map_err(|e| ProviderError::Protocol(e.to_string()))
    }

    fn transport(e: ureq::Error) -> ProviderError {
        ProviderError::Transient(e.to_string())
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B) -> ProviderResult<T> {
        let _permit = self.gate.acquire();
        let auth = self.auth_header();
        let res = with_retry(&self.policy, |_| {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(url);
            if let Some(a) = &auth {
                req = req.header("Authorization", a);
            }
            req.send_json(body).map_err(Self::transport).and_then(Self::read::<T>)
        })?;
        Ok(res.value)
    }

    pub fn get<T: DeserializeOwned>(&self, url: &str) -> ProviderResult<T> {
        let _permit = self.gate.acquire();
        let auth = self.auth_header();
        let res = with_retry(&self.policy, |_| {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.get(url);
            if let Some(a) = &auth {
                req = req.header("Authorization", a);
            }
            req.call().map_err(Self::transport).and_then(Self::read::<T>)
        })?;
        Ok(res.value)
    }

    pub fn capabilities(&self) -> ProviderResult<Capabilities> {
        if let Some(c) = &self.endpoint.capabilities {
            return Ok(c.clone());
        }
        if let Some(c) = self.caps.get() {
            return Ok(c.clone());
        }
        let url = format!("{}/capabilities", self.endpoint.url.trim_end_matches('/'));
        let caps: Capabilities = self.get(&url)?;
        Ok(self.caps.get_or_init(|| caps).clone())
    }

    fn post_endpoint<B: Serialize, T: DeserializeOwned>(&self, body: &B) -> ProviderResult<T> {
        self.post(&self.endpoint.url, body)
    }
}

pub struct HttpCorrector(pub HttpClient);

#[derive(Deserialize)]
struct Corrected {
    corrected_text: String,
}

impl CorrectorProvider for HttpCorrector {
    fn correct(&self, text: &str) -> ProviderResult<String> {
        let r: Corrected = self.0.post_endpoint(&json!({ "text": text }))?;
        Ok(r.corrected_text)
    }

    fn deterministic(&self) -> bool {
        self.0.capabilities().map(|c| c.deterministic).unwrap_or(false)
    }
}

pub struct HttpEmbedder(pub HttpClient);

#[derive(Deserialize)]
struct Vectors {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f64>>> {
        let r: Vectors = self.0.post_endpoint(&json!({ "texts": texts }))?;
        if r.vectors.len() != texts.len() {
            return Err(ProviderError::Protocol(format!("{} vectors for {} texts", r.vectors.len(), texts.len())));
        }
        Ok(r.vectors)
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        self.0.capabilities()
    }
}

pub struct HttpTokenizer(pub HttpClient);

#[derive(Deserialize)]
struct Tokens {
    tokens: Vec<u32>,
}

#[derive(Deserialize)]
struct Text {
    text: String,
}

impl Tokenizer for HttpTokenizer {
    fn tokenize(&self, text: &str) -> ProviderResult<Vec<u32>> {
        let r: Tokens = self.0.post_endpoint(&json!({ "text": text }))?;
        Ok(r.tokens)
    }

    fn detokenize(&self, ids: &[u32]) -> ProviderResult<String> {
        let r: Text = self.0.post_endpoint(&json!({ "tokens": ids }))?;
        Ok(r.text)
    }
}

pub struct HttpSurprisal(pub HttpClient);

#[derive(Deserialize)]
struct Logprobs {
    logprobs: Vec<f64>,
}

impl SurprisalProvider for HttpSurprisal {
    fn logprobs(&self, context: &[u32], targets: &[u32]) -> ProviderResult<Vec<f64>> {
        let r: Logprobs =
            self.0.post_endpoint(&json!({ "context_tokens": context, "target_tokens": targets }))?;
        Ok(r.logprobs)
    }

    fn capabilities(&self) -> ProviderResult<Capabilities> {
        self.0.capabilities()
    }
}

pub struct HttpChat(pub HttpClient);

impl ChatProvider for HttpChat {
    fn complete(&self, request: &ChatRequest) -> ProviderResult<String> {
        let r: Text = self.0.post_endpoint(request)?;
        Ok(r.text)
    }
}
