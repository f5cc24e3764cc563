//! Value types shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{bytes_digest, prompt_digest};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("image does not decode as PNG or JPEG: {0}")]
    InvalidImage(String),
    #[error("fitness record: {0}")]
    InvalidFitness(String),
    #[error("individual {id}: {reason}")]
    InvalidIndividual { id: String, reason: String },
}

/// A candidate prompt and its token count under the configured tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    text: String,
    content_token_count: usize,
}

impl Prompt {
    pub fn new(text: impl Into<String>, tokenizer: &dyn Tokenizer) -> Result<Self, TypeError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::EmptyPrompt);
        }
        let content_token_count = tokenizer.count(&text);
        Ok(Self {
            text,
            content_token_count,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn content_token_count(&self) -> usize {
        self.content_token_count
    }

    pub fn digest(&self) -> String {
        prompt_digest(&self.text)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            ImageFormat::Png => "image/png",
            ImageFormat::Jpeg => "image/jpeg",
        }
    }
}

/// Checks that `bytes` is a decodable PNG or JPEG and returns its format.
pub fn validate_raster(bytes: &[u8]) -> Result<ImageFormat, TypeError> {
    let format = match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => ImageFormat::Png,
        Ok(image::ImageFormat::Jpeg) => ImageFormat::Jpeg,
        Ok(other) => {
            return Err(TypeError::InvalidImage(format!(
                "unsupported format {other:?}"
            )))
        }
        Err(e) => return Err(TypeError::InvalidImage(e.to_string())),
    };
    let reader = image::ImageReader::with_format(std::io::Cursor::new(bytes), match format {
        ImageFormat::Png => image::ImageFormat::Png,
        ImageFormat::Jpeg => image::ImageFormat::Jpeg,
    });
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| TypeError::InvalidImage(e.to_string()))?;
    if w == 0 || h == 0 {
        return Err(TypeError::InvalidImage("zero-sized image".into()));
    }
    Ok(format)
}

/// The image a run tries to reconstruct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetImage {
    bytes: Vec<u8>,
    content_hash: String,
    source_id: String,
    format: ImageFormat,
}

impl TargetImage {
    pub fn from_bytes(bytes: Vec<u8>, source_id: impl Into<String>) -> Result<Self, TypeError> {
        let format = validate_raster(&bytes)?;
        Ok(Self {
            content_hash: bytes_digest(&bytes),
            bytes,
            source_id: source_id.into(),
            format,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn format(&self) -> ImageFormat {
        self.format
    }
}

/// One image produced by a text-to-image backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    bytes: Vec<u8>,
    seed: u64,
    prompt_hash: String,
}

impl GeneratedImage {
    pub fn new(bytes: Vec<u8>, seed: u64, prompt_hash: impl Into<String>) -> Result<Self, TypeError> {
        validate_raster(&bytes)?;
        Ok(Self {
            bytes,
            seed,
            prompt_hash: prompt_hash.into(),
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prompt_hash(&self) -> &str {
        &self.prompt_hash
    }
}

/// The K similarity scores of one prompt and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub per_image_scores: Vec<f64>,
    pub mean_score: f64,
    pub image_refs: Vec<String>,
    pub scorer_id: String,
}

impl FitnessRecord {
    pub fn from_scores(
        per_image_scores: Vec<f64>,
        image_refs: Vec<String>,
        scorer_id: impl Into<String>,
    ) -> Result<Self, TypeError> {
        if per_image_scores.is_empty() {
            return Err(TypeError::InvalidFitness("no scores".into()));
        }
        if per_image_scores.len() != image_refs.len() {
            return Err(TypeError::InvalidFitness(format!(
                "{} scores but {} image refs",
                per_image_scores.len(),
                image_refs.len()
            )));
        }
        if let Some(bad) = per_image_scores.iter().find(|s| !s.is_finite()) {
            return Err(TypeError::InvalidFitness(format!("non-finite score {bad}")));
        }
        let mean_score = per_image_scores.iter().sum::<f64>() / per_image_scores.len() as f64;
        Ok(Self {
            per_image_scores,
            mean_score,
            image_refs,
            scorer_id: scorer_id.into(),
        })
    }

    /// Checks the record against the configured K.
    pub fn check(&self, k: usize) -> Result<(), TypeError> {
        if self.per_image_scores.len() != k || self.image_refs.len() != k {
            return Err(TypeError::InvalidFitness(format!(
                "expected {k} scores, found {}",
                self.per_image_scores.len()
            )));
        }
        let mean = self.per_image_scores.iter().sum::<f64>() / k as f64;
        if (mean - self.mean_score).abs() > 1e-9 {
            return Err(TypeError::InvalidFitness(format!(
                "mean {} does not match scores (expected {mean})",
                self.mean_score
            )));
        }
        Ok(())
    }
}

/// How an individual came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Init,
    Crossover,
    CrossoverThenMutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub prompt: Prompt,
    pub fitness: Option<FitnessRecord>,
    pub born_generation: u32,
    pub operator: Operator,
    pub parent_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_probability: Option<f64>,
    /// Set when a failed VLM call was replaced by the fallback rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution: Option<String>,
}

impl Individual {
    pub fn init(id: impl Into<String>, prompt: Prompt, probability: f64) -> Self {
        Self {
            id: id.into(),
            prompt,
            fitness: None,
            born_generation: 0,
            operator: Operator::Init,
            parent_ids: Vec::new(),
            init_probability: Some(probability.clamp(0.0, 1.0)),
            substitution: None,
        }
    }

    pub fn offspring(
        id: impl Into<String>,
        prompt: Prompt,
        generation: u32,
        operator: Operator,
        parents: [String; 2],
    ) -> Self {
        debug_assert!(operator != Operator::Init && generation > 0);
        Self {
            id: id.into(),
            prompt,
            fitness: None,
            born_generation: generation,
            operator,
            parent_ids: parents.to_vec(),
            init_probability: None,
            substitution: None,
        }
    }

    pub fn mean_score(&self) -> Option<f64> {
        self.fitness.as_ref().map(|f| f.mean_score)
    }

    pub fn text(&self) -> &str {
        self.prompt.text()
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        let fail = |reason: &str| {
            Err(TypeError::InvalidIndividual {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        let is_init = self.operator == Operator::Init;
        if is_init != (self.born_generation == 0 && self.parent_ids.is_empty()) {
            return fail("init operator must coincide with generation 0 and no parents");
        }
        if !is_init && self.parent_ids.len() != 2 {
            return fail("offspring must have exactly two parents");
        }
        if self.init_probability.is_some() && !is_init {
            return fail("init probability on a non-init individual");
        }
        if let Some(p) = self.init_probability {
            if !(0.0..=1.0).contains(&p) {
                return fail("init probability outside [0, 1]");
            }
        }
        if self.prompt.text().trim().is_empty() {
            return fail("empty prompt");
        }
        Ok(())
    }
}
