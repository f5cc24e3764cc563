use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;

use super::{
    BackendError, ScorerBackend, T2IBackend, T2iDescriptor, VlmBackend, VlmDescriptor,
};
use crate::config::RunConfig;
use crate::templates::VlmMessage;
use crate::types::{GeneratedImage, Prompt};

/// Exponential backoff for retryable errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Relative jitter; 0.2 means each delay is scaled by a factor in [0.8, 1.2].
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            max_retries: cfg.backends.max_retries,
            base_delay: Duration::from_millis(cfg.backends.backoff_base_ms),
            ..Self::default()
        }
    }

    /// Nominal delay before retry number `attempt` (0-based), without jitter.
    pub fn nominal_delay(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt as i32))
    }

    fn delay(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let nominal = self.nominal_delay(attempt);
        let scale = if self.jitter > 0.0 {
            rand::thread_rng().gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        let jittered = nominal.mul_f64(scale);
        hint.map_or(jittered, |h| h.max(jittered))
    }

    /// Runs `op`, retrying retryable failures at most `max_retries` times.
    pub fn run<T>(&self, what: &str, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let hint = match &e {
                        BackendError::RateLimited { retry_after } => *retry_after,
                        _ => None,
                    };
                    let wait = self.delay(attempt, hint);
                    log::warn!("{what}: {e}; retry {} in {:?}", attempt + 1, wait);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Wraps a backend so its calls go through a [`RetryPolicy`].
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
}

impl<B> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: VlmBackend> VlmBackend for Retrying<B> {
    fn descriptor(&self) -> VlmDescriptor {
        self.inner.descriptor()
    }

    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        self.policy
            .run(call_tag, || self.inner.chat(messages, temperature, call_tag))
    }
}

impl<B: T2IBackend> T2IBackend for Retrying<B> {
    fn descriptor(&self) -> T2iDescriptor {
        self.inner.descriptor()
    }

    fn generate_one(&self, prompt: &Prompt, seed: u64) -> Result<GeneratedImage, BackendError> {
        self.policy
            .run("t2i", || self.inner.generate_one(prompt, seed))
    }
}

impl<B: ScorerBackend> ScorerBackend for Retrying<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn score_range(&self) -> (f64, f64) {
        self.inner.score_range()
    }

    fn score(&self, a: &[u8], b: &[u8]) -> Result<f64, BackendError> {
        self.policy.run("scorer", || self.inner.score(a, b))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Gate {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Gate {
    pub fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        GatePermit { gate: self }
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.gate.freed.notify_one();
    }
}
