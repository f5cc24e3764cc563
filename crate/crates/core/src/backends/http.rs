//! HTTP clients for hosted services.
//!
//! * VLM: OpenAI-compatible chat completions; images are sent as base64
//!   data-URL `image_url` content parts.
//! * T2I: an images-generation endpoint taking `{model, prompt, n, size,
//!   seed, response_format}` and returning `{data: [{b64_json}]}`.
//! * Scorer: `{metric, image_a, image_b}` (base64) returning `{score}`.
//!
//! Endpoint URLs are used as given (full path). Keys are read from the
//! environment variables named in the configuration.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::retry::Gate;
use super::{BackendError, ScorerBackend, T2IBackend, T2iDescriptor, VlmBackend, VlmDescriptor};
use crate::config::{self, RunConfig};
use crate::templates::{Role, VlmMessage};
use crate::types::{GeneratedImage, Prompt};

fn client(timeout: Duration) -> Result<Client, BackendError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

fn transport(e: reqwest::Error) -> BackendError {
    BackendError::Transport(e.to_string())
}

/// Maps non-success statuses onto the error taxonomy.
fn check_status(resp: Response, refusal: bool) -> Result<Response, BackendError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    if status == StatusCode::TOO_MANY_REQUESTS {
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        return Err(BackendError::RateLimited { retry_after });
    }
    let body = resp.text().unwrap_or_default();
    let snippet: String = body.chars().take(300).collect();
    if status.is_server_error() || status == StatusCode::REQUEST_TIMEOUT {
        return Err(BackendError::Transport(format!("{status}: {snippet}")));
    }
    if refusal && (status == StatusCode::BAD_REQUEST || status == StatusCode::UNPROCESSABLE_ENTITY) {
        return Err(BackendError::GenerationRefused(format!("{status}: {snippet}")));
    }
    Err(BackendError::BadResponse(format!("{status}: {snippet}")))
}

fn data_url(mime: &str, bytes: &[u8]) -> String {
    format!("data:{mime};base64,{}", B64.encode(bytes))
}

/// Request body for an OpenAI-compatible chat completion.
pub fn chat_request_body(model: &str, messages: &[VlmMessage], temperature: f64) -> Value {
    let messages: Vec<Value> = messages
        .iter()
        .map(|m| match m.role {
            Role::System => json!({"role": "system", "content": m.text}),
            Role::User => {
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                parts.extend(m.image_attachments.iter().map(|a| {
                    json!({"type": "image_url", "image_url": {"url": data_url(a.mime, &a.bytes)}})
                }));
                json!({"role": "user", "content": parts})
            }
        })
        .collect();
    json!({
        "model": model,
        "messages": messages,
        "temperature": temperature,
        "stream": false,
    })
}

fn chat_response_text(v: &Value) -> Result<String, BackendError> {
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // some servers return content parts
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(BackendError::BadResponse("content is neither text nor parts".into())),
    }
}

pub struct OpenAiVlm {
    url: String,
    api_key: Option<String>,
    model: String,
    max_attachments: usize,
    client: Client,
    gate: Gate,
}

impl OpenAiVlm {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, max_attachments: usize, max_in_flight: usize, timeout: Duration) -> Result<Self, BackendError> {
        Ok(Self {
            url: url.into(),
            api_key,
            model: model.into(),
            max_attachments,
            client: client(timeout)?,
            gate: Gate::new(max_in_flight),
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, BackendError> {
        let b = &cfg.backends;
        let url = config::resolve(&b.vlm.url, config::ENV_VLM_URL)
            .ok_or_else(|| BackendError::InvalidRequest("no VLM endpoint configured".into()))?;
        Self::new(
            url,
            std::env::var(&b.vlm.api_key_env).ok(),
            b.vlm.model.clone(),
            b.vlm.max_attachments,
            b.max_in_flight,
            Duration::from_secs(b.timeout_secs),
        )
    }
}

impl VlmBackend for OpenAiVlm {
    fn descriptor(&self) -> VlmDescriptor {
        VlmDescriptor {
            id: format!("openai:{}", self.model),
            supports_images: true,
            max_attachments: self.max_attachments,
        }
    }

    fn chat(&self, messages: &[VlmMessage], temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        let body = chat_request_body(&self.model, messages, temperature);
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.url).json(&body).header("x-call-tag", call_tag);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(transport)?, false)?;
        let v: Value = resp.json().map_err(|e| BackendError::BadResponse(e.to_string()))?;
        chat_response_text(&v)
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageRequest {
    pub model: String,
    pub prompt: String,
    pub n: u32,
    pub size: String,
    pub seed: u64,
    pub response_format: String,
}

#[derive(Debug, Deserialize)]
struct ImageResponse {
    data: Vec<ImageDatum>,
}

#[derive(Debug, Deserialize)]
struct ImageDatum {
    b64_json: Option<String>,
}

pub struct ImagesApiT2i {
    url: String,
    api_key: Option<String>,
    model: String,
    size: String,
    client: Client,
    gate: Gate,
}

impl ImagesApiT2i {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, size: impl Into<String>, max_in_flight: usize, timeout: Duration) -> Result<Self, BackendError> {
        Ok(Self {
            url: url.into(),
            api_key,
            model: model.into(),
            size: size.into(),
            client: client(timeout)?,
            gate: Gate::new(max_in_flight),
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, BackendError> {
        let b = &cfg.backends;
        let url = config::resolve(&b.t2i.url, config::ENV_T2I_URL)
            .ok_or_else(|| BackendError::InvalidRequest("no T2I endpoint configured".into()))?;
        Self::new(
            url,
            std::env::var(&b.t2i.api_key_env).ok(),
            b.t2i.model.clone(),
            b.t2i.size.clone(),
            b.max_in_flight,
            Duration::from_secs(b.timeout_secs),
        )
    }
}

impl T2IBackend for ImagesApiT2i {
    fn descriptor(&self) -> T2iDescriptor {
        T2iDescriptor {
            id: format!("images:{}", self.model),
            image_size: self.size.clone(),
        }
    }

    fn generate_one(&self, prompt: &Prompt, seed: u64) -> Result<GeneratedImage, BackendError> {
        let body = ImageRequest {
            model: self.model.clone(),
            prompt: prompt.text().to_string(),
            n: 1,
            size: self.size.clone(),
            seed,
            response_format: "b64_json".into(),
        };
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(transport)?, true)?;
        let parsed: ImageResponse = resp.json().map_err(|e| BackendError::BadResponse(e.to_string()))?;
        let b64 = parsed
            .data
            .into_iter()
            .next()
            .and_then(|d| d.b64_json)
            .ok_or_else(|| BackendError::BadResponse("no b64_json image in response".into()))?;
        let bytes = B64
            .decode(b64.trim())
            .map_err(|e| BackendError::BadResponse(format!("base64: {e}")))?;
        GeneratedImage::new(bytes, seed, prompt.digest()).map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub metric: String,
    pub image_a: String,
    pub image_b: String,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    score: f64,
}

pub struct HttpScorer {
    id: String,
    url: String,
    range: (f64, f64),
    client: Client,
    gate: Gate,
}

impl HttpScorer {
    pub fn new(id: impl Into<String>, url: impl Into<String>, range: (f64, f64), max_in_flight: usize, timeout: Duration) -> Result<Self, BackendError> {
        Ok(Self {
            id: id.into(),
            url: url.into(),
            range,
            client: client(timeout)?,
            gate: Gate::new(max_in_flight),
        })
    }

    pub fn from_config(cfg: &RunConfig, metric: &str) -> Result<Self, BackendError> {
        let b = &cfg.backends;
        let endpoint = b.scorers.get(metric).cloned().unwrap_or_default();
        let url = config::resolve(&endpoint.url, config::ENV_SCORER_URL)
            .ok_or_else(|| BackendError::InvalidRequest(format!("no endpoint for scorer `{metric}`")))?;
        Self::new(
            metric,
            url,
            (endpoint.score_min, endpoint.score_max),
            b.max_in_flight,
            Duration::from_secs(b.timeout_secs),
        )
    }
}

impl ScorerBackend for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_range(&self) -> (f64, f64) {
        self.range
    }

    fn score(&self, a: &[u8], b: &[u8]) -> Result<f64, BackendError> {
        let body = ScoreRequest {
            metric: self.id.clone(),
            image_a: B64.encode(a),
            image_b: B64.encode(b),
        };
        let _permit = self.gate.acquire();
        let resp = check_status(self.client.post(&self.url).json(&body).send().map_err(transport)?, false)?;
        let parsed: ScoreResponse = resp.json().map_err(|e| BackendError::BadResponse(e.to_string()))?;
        Ok(parsed.score)
    }
}
