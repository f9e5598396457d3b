//! Deterministic stand-ins for the model services.
//!
//! Every mock is a pure function of its inputs, so whole pipeline runs on
//! mocks reproduce bit for bit.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CaptionRequest, CaptionRole, Detection, ImageInput, PersonDetector, ProviderError, TextEmbedder, VisionLanguageModel};
use crate::digest::{sha256_bytes, sha256_hex};

/// Fixed answers for one image, used instead of the hash-derived caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedCaption {
    pub pose: String,
    pub context: String,
}

/// Answers `MOCKCAP:<8 hex>` where the hex is the head of
/// `sha256(content_hash ":" prompt_hash)`.
///
/// A script keyed by image digest (either the stored image or its uncropped
/// source) overrides that answer with fixed pose and context text.
#[derive(Debug, Clone, Default)]
pub struct MockVlm {
    script: HashMap<String, ScriptedCaption>,
}

impl MockVlm {
    pub const MODEL_NAME: &'static str = "mock-vlm";

    pub fn with_script(script: HashMap<String, ScriptedCaption>) -> Self {
        Self { script }
    }

    /// Loads a script from `{"<sha256>": {"pose": .., "context": ..}}`.
    pub fn from_script_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)?;
        let script = serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidInput(format!("bad mock caption script {}: {e}", path.display())))?;
        Ok(Self { script })
    }

    pub fn default_answer(content_hash: &str, prompt: &str) -> String {
        let combined = sha256_hex(format!("{content_hash}:{}", sha256_hex(prompt)));
        format!("MOCKCAP:{}", &combined[..8])
    }
}

impl VisionLanguageModel for MockVlm {
    fn model_name(&self) -> &str {
        Self::MODEL_NAME
    }

    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        let scripted = self
            .script
            .get(request.image.content_hash)
            .or_else(|| self.script.get(request.image.source_hash));
        Ok(match (scripted, request.role) {
            (Some(s), CaptionRole::Pose) => s.pose.clone(),
            (Some(s), CaptionRole::Context) => s.context.clone(),
            (None, _) => Self::default_answer(request.image.content_hash, request.prompt),
        })
    }
}

/// Vector of `dim` components in [-1, 1], component `i` read from
/// `sha256(sha256(text) || i)`. Not normalized; the client does that.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self { dim: 16 }
    }
}

impl MockEmbedder {
    pub const MODEL_NAME: &'static str = "mock-embedder";

    pub fn with_dim(dim: usize) -> Self {
        Self { dim }
    }

    pub fn raw_vector(text: &str, dim: usize) -> Vec<f32> {
        let seed = sha256_bytes(text);
        (0..dim)
            .map(|i| {
                let mut buf = seed.to_vec();
                buf.extend_from_slice(&(i as u32).to_le_bytes());
                let h = sha256_bytes(&buf);
                let u = u32::from_le_bytes([h[0], h[1], h[2], h[3]]);
                (f64::from(u) / f64::from(u32::MAX) * 2.0 - 1.0) as f32
            })
            .collect()
    }
}

impl TextEmbedder for MockEmbedder {
    fn model_name(&self) -> &str {
        Self::MODEL_NAME
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        Ok(Self::raw_vector(text, self.dim))
    }
}

/// Without fixed boxes, reports one person occupying the central column of
/// the image: `(w/4, h/8, w/2, 3h/4)` at confidence 0.9.
#[derive(Debug, Clone, Default)]
pub struct MockDetector {
    fixed: Option<Vec<Detection>>,
}

impl MockDetector {
    pub const MODEL_NAME: &'static str = "mock-detector";

    pub fn fixed(boxes: Vec<Detection>) -> Self {
        Self { fixed: Some(boxes) }
    }
}

impl PersonDetector for MockDetector {
    fn model_name(&self) -> &str {
        Self::MODEL_NAME
    }

    fn detect(&self, image: &ImageInput<'_>) -> Result<Vec<Detection>, ProviderError> {
        if let Some(boxes) = &self.fixed {
            return Ok(boxes.clone());
        }
        let (w, h) = image::ImageReader::new(Cursor::new(image.bytes))
            .with_guessed_format()
            .map_err(|e| ProviderError::InvalidInput(e.to_string()))?
            .into_dimensions()
            .map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
        let (w, h) = (f64::from(w), f64::from(h));
        Ok(vec![Detection { x: w / 4.0, y: h / 8.0, width: w / 2.0, height: h * 0.75, confidence: 0.9 }])
    }
}

/// Counts calls reaching the wrapped provider.
#[derive(Debug)]
pub struct Counting<P> {
    inner: P,
    calls: Arc<AtomicUsize>,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: Arc::new(AtomicUsize::new(0)) }
    }

    /// Shared handle to the counter; stays valid after the wrapper moves.
    pub fn calls(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }

    fn bump(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

impl<P: VisionLanguageModel> VisionLanguageModel for Counting<P> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        self.bump();
        self.inner.complete(request)
    }
}

impl<P: TextEmbedder> TextEmbedder for Counting<P> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        self.bump();
        self.inner.embed(text)
    }
}

impl<P: PersonDetector> PersonDetector for Counting<P> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn detect(&self, image: &ImageInput<'_>) -> Result<Vec<Detection>, ProviderError> {
        self.bump();
        self.inner.detect(image)
    }
}

/// Fails with a transport error for the first `failures` calls, then behaves
/// like [`MockVlm`].
#[derive(Debug)]
pub struct FailingVlm {
    failures: usize,
    attempts: Arc<AtomicUsize>,
}

impl FailingVlm {
    pub fn new(failures: usize) -> Self {
        Self { failures, attempts: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn attempts(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.attempts)
    }
}

impl VisionLanguageModel for FailingVlm {
    fn model_name(&self) -> &str {
        MockVlm::MODEL_NAME
    }

    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        let n = self.attempts.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            return Err(ProviderError::Transport("connection refused".into()));
        }
        MockVlm::default().complete(request)
    }
}
