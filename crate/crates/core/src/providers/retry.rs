use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Exponential backoff with additive jitter.
///
/// The delay before retry `k` (0-based) is drawn uniformly from
/// `[base * factor^k, base * factor^(k+1))`, capped at `max_delay_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 250, factor: 2.0, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    pub fn no_retries() -> Self {
        Self { max_retries: 0, ..Self::default() }
    }

    /// Half-open bounds in milliseconds for the delay before retry `k`.
    pub fn delay_bounds(&self, k: usize) -> (f64, f64) {
        let lo = self.base_delay_ms as f64 * self.factor.powi(k as i32);
        let hi = lo * self.factor.max(1.0);
        let cap = self.max_delay_ms as f64;
        (lo.min(cap), hi.min(cap))
    }

    fn draw_delay<R: Rng>(&self, k: usize, rng: &mut R) -> Duration {
        let (lo, hi) = self.delay_bounds(k);
        let ms = if hi > lo { rng.random_range(lo..hi) } else { lo };
        Duration::from_secs_f64(ms / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retried<T> {
    pub value: T,
    /// Attempts made, including the successful one.
    pub attempts: usize,
}

/// Runs `call` until it succeeds, fails with a non-retryable error, or the
/// retry budget runs out. `call` receives the 0-based attempt number.
pub fn with_retry<T, F>(policy: &RetryPolicy, call: F) -> Result<Retried<T>, ProviderError>
where
    F: FnMut(usize) -> Result<T, ProviderError>,
{
    with_retry_using(policy, &mut rand::rng(), std::thread::sleep, call)
}

pub fn with_retry_using<T, R, S, F>(
    policy: &RetryPolicy,
    rng: &mut R,
    mut sleep: S,
    mut call: F,
) -> Result<Retried<T>, ProviderError>
where
    R: Rng,
    S: FnMut(Duration),
    F: FnMut(usize) -> Result<T, ProviderError>,
{
    let mut log = Vec::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            sleep(policy.draw_delay(attempt - 1, rng));
        }
        match call(attempt) {
            Ok(value) => return Ok(Retried { value, attempts: attempt + 1 }),
            Err(e) if e.is_retryable() => log.push(format!("attempt {}: {e}", attempt + 1)),
            Err(e) => return Err(e),
        }
    }
    Err(ProviderError::Unavailable { attempts: log })
}
