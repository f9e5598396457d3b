//! HTTP providers.
//!
//! The VLM speaks the OpenAI-compatible chat-completions protocol with the
//! image attached as a base64 data URL; the embedder speaks the matching
//! `/embeddings` protocol. The detector posts `{"model", "image"}` (base64)
//! to its endpoint and expects `{"detections": [{x, y, width, height,
//! confidence, label?}]}`; detections with a label other than `person` are
//! dropped.

use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::Deserialize;
use serde_json::json;

use super::{CaptionRequest, Detection, ImageInput, PersonDetector, ProviderConfig, ProviderError, TextEmbedder, VisionLanguageModel};

fn build_client(cfg: &ProviderConfig) -> Result<Client, ProviderError> {
    cfg.validate()?;
    Client::builder()
        .timeout(Duration::from_millis(cfg.timeout_ms))
        .build()
        .map_err(|e| ProviderError::InvalidInput(format!("cannot build HTTP client: {e}")))
}

fn authorize(request: RequestBuilder, cfg: &ProviderConfig) -> RequestBuilder {
    if cfg.auth_env_var.is_empty() {
        return request;
    }
    match std::env::var(&cfg.auth_env_var) {
        Ok(key) if !key.is_empty() => request.bearer_auth(key),
        _ => request,
    }
}

fn send(request: RequestBuilder) -> Result<Response, ProviderError> {
    let response = request.send().map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    let body = response.text().unwrap_or_default();
    if status.is_server_error() || status.as_u16() == 429 {
        Err(ProviderError::Transport(format!("HTTP {status}: {body}")))
    } else {
        Err(ProviderError::Rejected { status: status.as_u16(), body })
    }
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn image_mime(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        Ok(image::ImageFormat::WebP) => "image/webp",
        Ok(image::ImageFormat::Gif) => "image/gif",
        _ => "image/png",
    }
}

pub struct OpenAiVlm {
    cfg: ProviderConfig,
    client: Client,
}

impl OpenAiVlm {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { client: build_client(&cfg)?, cfg })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl VisionLanguageModel for OpenAiVlm {
    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        let b64 = base64::engine::general_purpose::STANDARD.encode(request.image.bytes);
        let data_url = format!("data:{};base64,{b64}", image_mime(request.image.bytes));
        let body = json!({
            "model": self.cfg.model_name,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": request.prompt},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        });
        let http = self.client.post(join(&self.cfg.endpoint_url, "chat/completions")).json(&body);
        let response: ChatResponse = send(authorize(http, &self.cfg))?
            .json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let content = response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(content)
    }
}

pub struct OpenAiEmbedder {
    cfg: ProviderConfig,
    client: Client,
}

impl OpenAiEmbedder {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { client: build_client(&cfg)?, cfg })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl TextEmbedder for OpenAiEmbedder {
    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let body = json!({ "model": self.cfg.model_name, "input": text });
        let http = self.client.post(join(&self.cfg.endpoint_url, "embeddings")).json(&body);
        let response: EmbeddingResponse = send(authorize(http, &self.cfg))?
            .json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ProviderError::InvalidResponse("no embedding in response".into()))
    }
}

pub struct HttpDetector {
    cfg: ProviderConfig,
    client: Client,
}

impl HttpDetector {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { client: build_client(&cfg)?, cfg })
    }
}

#[derive(Deserialize)]
struct DetectorResponse {
    detections: Vec<WireDetection>,
}

#[derive(Deserialize)]
struct WireDetection {
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    confidence: f64,
    #[serde(default)]
    label: Option<String>,
}

impl PersonDetector for HttpDetector {
    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    fn detect(&self, image: &ImageInput<'_>) -> Result<Vec<Detection>, ProviderError> {
        let body = json!({
            "model": self.cfg.model_name,
            "image": base64::engine::general_purpose::STANDARD.encode(image.bytes),
        });
        let http = self.client.post(&self.cfg.endpoint_url).json(&body);
        let response: DetectorResponse = send(authorize(http, &self.cfg))?
            .json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        Ok(response
            .detections
            .into_iter()
            .filter(|d| d.label.as_deref().is_none_or(|l| l.eq_ignore_ascii_case("person")))
            .map(|d| Detection { x: d.x, y: d.y, width: d.width, height: d.height, confidence: d.confidence })
            .collect())
    }
}
