//! Uniform access to embedding and generative models.
//!
//! A [`Model`] wraps a backend (remote HTTP adapter or in-process mock) with
//! its [`ModelSpec`], enforces kind and capability checks, and consults an
//! optional on-disk response cache.

mod cache;
pub mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{JsonClient, ServiceError};
use crate::image_ref::ImageRef;
use crate::prompt::PromptBundle;
use crate::scoring::ScoringError;
use crate::{Embedding, ScoreRow};

pub use cache::{cache_key, CacheStats, ResponseCache};
pub use remote::{normalize_token, ChatCompletionsBackend, EmbeddingHttpBackend};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("model `{model}`: {source}")]
    Service {
        model: String,
        #[source]
        source: ServiceError,
    },
    #[error("model `{model}` is not a{} model", if *.expected == ModelKind::Embedding { "n embedding" } else { " generative" })]
    WrongKind { model: String, expected: ModelKind },
    #[error("model `{model}` accepts one image per prompt, bundle has {images}")]
    Capability { model: String, images: usize },
    #[error("model `{0}` does not return token scores")]
    ScoresUnavailable(String),
    #[error("image `{0}` does not resolve")]
    ImageUnresolvable(String),
    #[error("unknown mock model `{0}`")]
    UnknownMock(String),
    #[error("mock has no entry for {0}")]
    MockMiss(String),
    #[error("malformed backend output: {0}")]
    Malformed(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Embedding,
    Generative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub returns_scores: bool,
    #[serde(default)]
    pub accepts_multi_image: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self { returns_scores: true, accepts_multi_image: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Alternatives requested per generated position.
    pub top_logprobs: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 512, top_logprobs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    /// Base URL, or `mock:<name>` for an in-process mock.
    pub endpoint: String,
    #[serde(default)]
    pub capabilities: Capabilities,
    #[serde(default)]
    pub decoding: Decoding,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ModelSpec {
    pub fn mock(name: impl Into<String>, kind: ModelKind, mock: &str) -> Self {
        Self {
            name: name.into(),
            kind,
            endpoint: format!("mock:{mock}"),
            capabilities: Capabilities::default(),
            decoding: Decoding::default(),
            api_key_env: None,
        }
    }

    pub fn mock_name(&self) -> Option<&str> {
        self.endpoint.strip_prefix("mock:")
    }
}

/// How the per-position scores in a [`GenerationResult`] were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    RawLogit,
    LogProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Scores for generated positions only, consecutive from 0.
    pub rows: Vec<ScoreRow>,
    pub finish_reason: String,
    pub score_kind: ScoreKind,
}

impl GenerationResult {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self { text: text.into(), rows: vec![], finish_reason: "stop".into(), score_kind: ScoreKind::LogProb }
    }

    fn check_positions(&self) -> Result<(), GatewayError> {
        match self.rows.iter().enumerate().find(|(i, r)| r.position != *i) {
            Some((i, r)) => Err(GatewayError::Malformed(format!("row {i} has position {}", r.position))),
            None => Ok(()),
        }
    }
}

/// Adapters return plain service errors; [`Model`] attaches the model name.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError>;
    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError>;
}

pub trait GenerativeBackend: Send + Sync {
    fn generate(&self, bundle: &PromptBundle, decoding: &Decoding) -> Result<GenerationResult, GatewayError>;
}

#[derive(Clone)]
pub enum Backend {
    Embedding(Arc<dyn EmbeddingBackend>),
    Generative(Arc<dyn GenerativeBackend>),
}

impl Backend {
    pub fn kind(&self) -> ModelKind {
        match self {
            Backend::Embedding(_) => ModelKind::Embedding,
            Backend::Generative(_) => ModelKind::Generative,
        }
    }
}

/// A connected model. Cheap to share across worker threads.
pub struct Model {
    spec: ModelSpec,
    backend: Backend,
    cache: Option<Arc<ResponseCache>>,
    backend_calls: AtomicU64,
}

impl Model {
    pub fn new(spec: ModelSpec, backend: Backend) -> Self {
        Self { spec, backend, cache: None, backend_calls: AtomicU64::new(0) }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Calls that reached the backend, i.e. cache misses.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    fn wrong_kind(&self, expected: ModelKind) -> GatewayError {
        GatewayError::WrongKind { model: self.spec.name.clone(), expected }
    }

    fn name_service_error(&self, e: GatewayError) -> GatewayError {
        match e {
            GatewayError::Service { source, .. } => GatewayError::Service { model: self.spec.name.clone(), source },
            other => other,
        }
    }

    fn cached<T>(&self, request: &serde_json::Value, compute: impl FnOnce() -> Result<T, GatewayError>) -> Result<T, GatewayError>
    where
        T: Serialize + for<'de> Deserialize<'de>,
    {
        let request = serde_json::to_string(request).expect("request serializes");
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&self.spec.name, &request).and_then(|v| serde_json::from_value(v).ok()) {
                return Ok(hit);
            }
        }
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let value = compute().map_err(|e| self.name_service_error(e))?;
        if let Some(cache) = &self.cache {
            let json = serde_json::to_value(&value).expect("response serializes");
            if let Err(e) = cache.put(&self.spec.name, &request, &json) {
                log::warn!("cache write failed: {e}");
            }
        }
        Ok(value)
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        let Backend::Embedding(backend) = &self.backend else {
            return Err(self.wrong_kind(ModelKind::Embedding));
        };
        self.cached(&serde_json::json!({ "op": "embed_text", "text": text }), || backend.embed_text(text))
    }

    pub fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError> {
        let Backend::Embedding(backend) = &self.backend else {
            return Err(self.wrong_kind(ModelKind::Embedding));
        };
        if !image.resolves() {
            return Err(GatewayError::ImageUnresolvable(image.locator.clone()));
        }
        self.cached(&serde_json::json!({ "op": "embed_image", "image": image }), || backend.embed_image(image))
    }

    /// Generates a reply to `bundle`. With `need_scores`, fails up front if
    /// the model cannot return token scores.
    pub fn generate(&self, bundle: &PromptBundle, need_scores: bool) -> Result<GenerationResult, GatewayError> {
        let Backend::Generative(backend) = &self.backend else {
            return Err(self.wrong_kind(ModelKind::Generative));
        };
        let images = bundle.image_count();
        if images > 1 && !self.spec.capabilities.accepts_multi_image {
            return Err(GatewayError::Capability { model: self.spec.name.clone(), images });
        }
        if need_scores && !self.spec.capabilities.returns_scores {
            return Err(GatewayError::ScoresUnavailable(self.spec.name.clone()));
        }
        let decoding = self.spec.decoding;
        let request = serde_json::json!({
            "op": "generate",
            "decoding": decoding,
            "returns_scores": self.spec.capabilities.returns_scores,
            "bundle": bundle,
        });
        let result = self.cached(&request, || backend.generate(bundle, &decoding))?;
        result.check_positions()?;
        if need_scores && result.rows.is_empty() {
            return Err(GatewayError::ScoresUnavailable(self.spec.name.clone()));
        }
        Ok(result)
    }
}

/// Connects `spec` to a backend: `mock:` endpoints are looked up with
/// `mocks`, anything else is treated as an HTTP base URL.
pub fn connect(
    spec: &ModelSpec,
    mocks: &dyn Fn(&str, ModelKind) -> Option<Backend>,
) -> Result<Model, GatewayError> {
    let backend = match spec.mock_name() {
        Some(name) => {
            let backend = mocks(name, spec.kind).ok_or_else(|| GatewayError::UnknownMock(name.to_string()))?;
            if backend.kind() != spec.kind {
                return Err(GatewayError::WrongKind { model: spec.name.clone(), expected: spec.kind });
            }
            backend
        }
        None => {
            let client = JsonClient::from_env(&spec.endpoint, spec.api_key_env.as_deref(), spec.api_key_env.is_some())
                .map_err(|source| GatewayError::Service { model: spec.name.clone(), source })?;
            match spec.kind {
                ModelKind::Embedding => Backend::Embedding(Arc::new(EmbeddingHttpBackend::new(client, &spec.name))),
                ModelKind::Generative => {
                    Backend::Generative(Arc::new(ChatCompletionsBackend::new(client, &spec.name, spec.capabilities)))
                }
            }
        }
    };
    Ok(Model::new(spec.clone(), backend))
}
