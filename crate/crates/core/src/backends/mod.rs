//! Interfaces to the vision-language model, the text-to-image generator and
//! the image-similarity scorer.
//!
//! Each service has an HTTP client and a deterministic simulation. All
//! backends are `Send + Sync` and may be called from several threads.

pub mod http;
mod retry;
pub mod sim;
pub mod simimage;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::config::{BackendMode, RunConfig};
use crate::templates::VlmMessage;
use crate::types::{GeneratedImage, Prompt, TargetImage};

pub use retry::{Gate, RetryPolicy, Retrying};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("{got} image attachments exceed the backend limit of {max}")]
    AttachmentLimitExceeded { got: usize, max: usize },
    #[error("generation refused: {0}")]
    GenerationRefused(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("simulated VLM does not recognise the template")]
    UnrecognizedTemplate,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VlmDescriptor {
    pub id: String,
    pub supports_images: bool,
    pub max_attachments: usize,
}

pub trait VlmBackend: Send + Sync {
    fn descriptor(&self) -> VlmDescriptor;

    /// One chat completion. `call_tag` names the call for logging and for
    /// deriving per-call randomness in simulations.
    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct T2iDescriptor {
    pub id: String,
    pub image_size: String,
}

pub trait T2IBackend: Send + Sync {
    fn descriptor(&self) -> T2iDescriptor;

    fn generate_one(&self, prompt: &Prompt, seed: u64) -> Result<GeneratedImage, BackendError>;
}

pub trait ScorerBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Closed interval containing every score.
    fn score_range(&self) -> (f64, f64);

    fn score(&self, a: &[u8], b: &[u8]) -> Result<f64, BackendError>;
}

impl<T: VlmBackend + ?Sized> VlmBackend for Arc<T> {
    fn descriptor(&self) -> VlmDescriptor {
        (**self).descriptor()
    }
    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        (**self).chat(messages, temperature, call_tag)
    }
}

impl<T: T2IBackend + ?Sized> T2IBackend for Arc<T> {
    fn descriptor(&self) -> T2iDescriptor {
        (**self).descriptor()
    }
    fn generate_one(&self, prompt: &Prompt, seed: u64) -> Result<GeneratedImage, BackendError> {
        (**self).generate_one(prompt, seed)
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn score_range(&self) -> (f64, f64) {
        (**self).score_range()
    }
    fn score(&self, a: &[u8], b: &[u8]) -> Result<f64, BackendError> {
        (**self).score(a, b)
    }
}

/// Checks the preconditions of a chat call and forwards it.
pub fn vlm_chat(
    backend: &dyn VlmBackend,
    messages: &[VlmMessage],
    temperature: f64,
    call_tag: &str,
) -> Result<String, BackendError> {
    if messages.is_empty() {
        return Err(BackendError::InvalidRequest("no messages".into()));
    }
    let desc = backend.descriptor();
    let attachments: usize = messages.iter().map(|m| m.image_attachments.len()).sum();
    if attachments > 0 && !desc.supports_images {
        return Err(BackendError::AttachmentLimitExceeded { got: attachments, max: 0 });
    }
    if attachments > desc.max_attachments {
        return Err(BackendError::AttachmentLimitExceeded {
            got: attachments,
            max: desc.max_attachments,
        });
    }
    log::debug!("vlm call {call_tag} (t={temperature})");
    backend.chat(messages, temperature, call_tag)
}

/// Generates `k` images; image `i` uses seed `base_seed + i`.
pub fn t2i_generate(
    backend: &dyn T2IBackend,
    prompt: &Prompt,
    k: usize,
    base_seed: u64,
) -> Result<Vec<GeneratedImage>, BackendError> {
    if k == 0 {
        return Err(BackendError::InvalidRequest("k must be at least 1".into()));
    }
    let digest = prompt.digest();
    (0..k as u64)
        .map(|i| {
            let seed = base_seed + i;
            let img = backend.generate_one(prompt, seed)?;
            if img.seed() != seed || img.prompt_hash() != digest {
                return Err(BackendError::BadResponse(
                    "generated image metadata does not match the request".into(),
                ));
            }
            Ok(img)
        })
        .collect()
}

/// Scores two images and checks the result against the scorer's range.
pub fn score_pair(backend: &dyn ScorerBackend, a: &[u8], b: &[u8]) -> Result<f64, BackendError> {
    let s = backend.score(a, b)?;
    let (lo, hi) = backend.score_range();
    if !s.is_finite() || s < lo - 1e-9 || s > hi + 1e-9 {
        return Err(BackendError::BadResponse(format!(
            "score {s} outside [{lo}, {hi}]"
        )));
    }
    Ok(s.clamp(lo, hi))
}

/// The three services a run talks to.
#[derive(Clone)]
pub struct Backends {
    pub vlm: Arc<dyn VlmBackend>,
    pub t2i: Arc<dyn T2IBackend>,
    pub scorer: Arc<dyn ScorerBackend>,
}

impl Backends {
    /// All three services backed by one simulation world.
    pub fn sim(world: Arc<sim::SimWorld>) -> Self {
        Self {
            vlm: Arc::new(sim::SimVlm::new(world.clone())),
            t2i: Arc::new(sim::SimT2i::new(world.clone())),
            scorer: Arc::new(sim::SimScorer::new(world)),
        }
    }

    /// Builds the configured backends for `target`. Simulation worlds are
    /// derived from the run seed and the target.
    pub fn from_config(cfg: &RunConfig, target: &TargetImage) -> Result<Self, BackendError> {
        match cfg.backends.mode {
            BackendMode::Sim => Ok(Self::sim(Arc::new(sim::SimWorld::for_target(
                cfg.engine.rng_seed,
                &cfg.backends.sim,
                target,
            )))),
            BackendMode::Http => {
                let policy = RetryPolicy::from_config(cfg);
                Ok(Self {
                    vlm: Arc::new(Retrying::new(http::OpenAiVlm::from_config(cfg)?, policy)),
                    t2i: Arc::new(Retrying::new(http::ImagesApiT2i::from_config(cfg)?, policy)),
                    scorer: Arc::new(Retrying::new(
                        http::HttpScorer::from_config(cfg, &cfg.engine.guidance_scorer)?,
                        policy,
                    )),
                })
            }
        }
    }
}
