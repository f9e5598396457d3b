//! External model services behind swappable traits.
//!
//! Three roles exist: a vision-language model that answers a prompt about an
//! image, a sentence embedder, and a person detector. Each role has an HTTP
//! implementation ([`http`]) and a deterministic mock ([`mock`]). The
//! `*Client` types add the response cache and the retry policy on top of a raw
//! provider; pipeline code only talks to clients.

pub mod cache;
pub mod http;
pub mod mock;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use cache::{CacheKey, CacheKind, ResponseCache};

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Connection failures, timeouts, 5xx and 429 responses. Retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("provider unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("embedding dimension mismatch for model {model}: expected {expected}, got {got}")]
    DimensionMismatch { model: String, expected: usize, got: usize },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// Connection settings for a remote provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is read at request time and never stored or logged.
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    500
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_ms == 0 {
            return Err(ProviderError::InvalidInput("timeout_ms must be positive".into()));
        }
        if self.endpoint_url.trim().is_empty() {
            return Err(ProviderError::InvalidInput("endpoint_url is empty".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ProviderError::InvalidInput("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

/// Exponential backoff: the delay before retry `n` (0-based) is
/// `backoff_base * 2^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, backoff_base: Duration::ZERO }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32.checked_shl(retry.min(16)).unwrap_or(u32::MAX))
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() => {
                    if attempt >= self.max_retries {
                        return Err(ProviderError::Unavailable { attempts: attempt + 1, last: err.to_string() });
                    }
                    let delay = self.delay(attempt);
                    tracing::debug!(attempt, ?delay, error = %err, "retrying provider call");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Which of the two chained prompts a caption request carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionRole {
    Pose,
    Context,
}

/// An image as handed to a provider.
#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub bytes: &'a [u8],
    pub content_hash: &'a str,
    /// Digest of the uncropped original. Equal to `content_hash` when the
    /// frame was not cropped.
    pub source_hash: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct CaptionRequest<'a> {
    pub image: ImageInput<'a>,
    pub prompt: &'a str,
    pub role: CaptionRole,
}

pub trait VisionLanguageModel: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError>;
}

pub trait TextEmbedder: Send + Sync {
    fn model_name(&self) -> &str;
    /// Raw vector as the provider returns it; no normalization expected.
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError>;
}

pub trait PersonDetector: Send + Sync {
    fn model_name(&self) -> &str;
    fn detect(&self, image: &ImageInput<'_>) -> Result<Vec<Detection>, ProviderError>;
}

impl<T: VisionLanguageModel + ?Sized> VisionLanguageModel for Arc<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Arc<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        (**self).embed(text)
    }
}

impl<T: PersonDetector + ?Sized> PersonDetector for Arc<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn detect(&self, image: &ImageInput<'_>) -> Result<Vec<Detection>, ProviderError> {
        (**self).detect(image)
    }
}

/// A person bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }
}

/// A unit-norm sentence embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub dim: usize,
    pub model_name: String,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Rescales `values` to unit Euclidean norm. The norm is taken in f64.
    pub fn normalized(values: Vec<f32>, model_name: &str) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidResponse("empty embedding".into()));
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(ProviderError::InvalidResponse(format!("embedding has norm {norm}")));
        }
        let values: Vec<f32> = values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect();
        Ok(Self { dim: values.len(), values, model_name: model_name.to_string(), normalized: true })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// `u32` little-endian dim, then the values as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.values.len());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], model_name: &str) -> Option<Self> {
        let (head, rest) = bytes.split_first_chunk::<4>()?;
        let dim = u32::from_le_bytes(*head) as usize;
        if rest.len() != dim * 4 {
            return None;
        }
        let values: Vec<f32> = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(Self { dim, values, model_name: model_name.to_string(), normalized: true })
    }
}

/// Cached, retried access to a vision-language model.
pub struct CaptionClient {
    vlm: Arc<dyn VisionLanguageModel>,
    cache: Arc<dyn ResponseCache>,
    retry: RetryPolicy,
}

impl CaptionClient {
    pub fn new(vlm: Arc<dyn VisionLanguageModel>, cache: Arc<dyn ResponseCache>, retry: RetryPolicy) -> Self {
        Self { vlm, cache, retry }
    }

    pub fn model_name(&self) -> &str {
        self.vlm.model_name()
    }

    /// Answers `prompt` about the image. Blank answers are rejected and
    /// never cached.
    pub fn caption(&self, image: &ImageInput<'_>, prompt: &str, role: CaptionRole) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::InvalidInput("empty prompt".into()));
        }
        let key = CacheKey {
            content_hash: image.content_hash.to_string(),
            prompt_hash: sha256_hex(prompt),
            model_name: self.vlm.model_name().to_string(),
            kind: CacheKind::Caption,
        };
        let bytes = cache::lookup_or_compute::<ProviderError>(self.cache.as_ref(), &key, || {
            let answer = self.retry.run(|| self.vlm.complete(&CaptionRequest { image: *image, prompt, role }))?;
            let answer = answer.trim();
            if answer.is_empty() {
                return Err(ProviderError::EmptyResponse);
            }
            Ok(answer.as_bytes().to_vec())
        })?;
        String::from_utf8(bytes).map_err(|e| ProviderError::InvalidResponse(format!("cached caption is not UTF-8: {e}")))
    }
}

/// Cached, retried, normalizing access to a sentence embedder.
pub struct EmbeddingClient {
    embedder: Arc<dyn TextEmbedder>,
    cache: Arc<dyn ResponseCache>,
    retry: RetryPolicy,
    dims: Mutex<HashMap<String, usize>>,
}

impl EmbeddingClient {
    pub fn new(embedder: Arc<dyn TextEmbedder>, cache: Arc<dyn ResponseCache>, retry: RetryPolicy) -> Self {
        Self { embedder, cache, retry, dims: Mutex::new(HashMap::new()) }
    }

    pub fn model_name(&self) -> &str {
        self.embedder.model_name()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidInput("cannot embed empty text".into()));
        }
        let model = self.embedder.model_name();
        let key = CacheKey {
            content_hash: sha256_hex(text),
            prompt_hash: String::new(),
            model_name: model.to_string(),
            kind: CacheKind::Embedding,
        };
        let bytes = cache::lookup_or_compute::<ProviderError>(self.cache.as_ref(), &key, || {
            let raw = self.retry.run(|| self.embedder.embed(text))?;
            self.check_dim(raw.len())?;
            Ok(EmbeddingVector::normalized(raw, model)?.to_bytes())
        })?;
        let vector = EmbeddingVector::from_bytes(&bytes, model)
            .ok_or_else(|| ProviderError::InvalidResponse("corrupt cached embedding".into()))?;
        self.check_dim(vector.dim)?;
        Ok(vector)
    }

    fn check_dim(&self, got: usize) -> Result<(), ProviderError> {
        let model = self.embedder.model_name();
        let mut dims = self.dims.lock().expect("dimension table poisoned");
        match dims.get(model) {
            Some(&expected) if expected != got => {
                Err(ProviderError::DimensionMismatch { model: model.to_string(), expected, got })
            }
            Some(_) => Ok(()),
            None => {
                dims.insert(model.to_string(), got);
                Ok(())
            }
        }
    }
}

/// Cached, retried access to a person detector.
pub struct DetectionClient {
    detector: Arc<dyn PersonDetector>,
    cache: Arc<dyn ResponseCache>,
    retry: RetryPolicy,
}

impl DetectionClient {
    pub fn new(detector: Arc<dyn PersonDetector>, cache: Arc<dyn ResponseCache>, retry: RetryPolicy) -> Self {
        Self { detector, cache, retry }
    }

    pub fn detect(&self, content_hash: &str, source_hash: &str, bytes: &[u8]) -> Result<Vec<Detection>, ProviderError> {
        let key = CacheKey {
            content_hash: content_hash.to_string(),
            prompt_hash: String::new(),
            model_name: self.detector.model_name().to_string(),
            kind: CacheKind::Detection,
        };
        let image = ImageInput { bytes, content_hash, source_hash };
        let bytes = cache::lookup_or_compute::<ProviderError>(self.cache.as_ref(), &key, || {
            let boxes = self.retry.run(|| self.detector.detect(&image))?;
            Ok(serde_json::to_vec(&boxes).expect("detections serialize"))
        })?;
        serde_json::from_slice(&bytes).map_err(|e| ProviderError::InvalidResponse(format!("corrupt cached detections: {e}")))
    }
}
