//! HTTP adapters speaking the common chat-completion and embedding JSON
//! schemas.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{Capabilities, Decoding, EmbeddingBackend, GatewayError, GenerationResult, GenerativeBackend, ScoreKind};
use crate::http::{JsonClient, ServiceError};
use crate::image_ref::ImageRef;
use crate::prompt::{PromptBundle, PromptSegment};
use crate::scoring::EmbeddingVector;
use crate::{Embedding, ScoreRow};

fn service(e: ServiceError) -> GatewayError {
    GatewayError::Service { model: String::new(), source: e }
}

fn decode(msg: impl Into<String>) -> GatewayError {
    service(ServiceError::Decode(msg.into()))
}

fn image_url(image: &ImageRef) -> Result<String, GatewayError> {
    image.to_url().map_err(|e| GatewayError::ImageUnresolvable(format!("{}: {e}", image.locator)))
}

/// Strips one leading space so that `" yes"` and `"yes"` match the same
/// target token.
pub fn normalize_token(token: &str) -> &str {
    token.strip_prefix(' ').unwrap_or(token)
}

pub struct ChatCompletionsBackend {
    client: JsonClient,
    model: String,
    capabilities: Capabilities,
}

impl ChatCompletionsBackend {
    pub fn new(client: JsonClient, model: &str, capabilities: Capabilities) -> Self {
        Self { client, model: model.to_string(), capabilities }
    }

    /// One user message whose content parts follow the bundle's segments;
    /// local images are inlined as base64 data URIs.
    pub fn request_body(&self, bundle: &PromptBundle, decoding: &Decoding) -> Result<Value, GatewayError> {
        let mut parts = Vec::with_capacity(bundle.segments.len());
        for seg in &bundle.segments {
            parts.push(match seg {
                PromptSegment::Text { text } => json!({ "type": "text", "text": text }),
                PromptSegment::ImageSlot { image } => {
                    json!({ "type": "image_url", "image_url": { "url": image_url(image)? } })
                }
            });
        }
        let mut body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": parts }],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
        });
        if self.capabilities.returns_scores {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(decoding.top_logprobs);
        }
        Ok(body)
    }

    pub fn parse_response(resp: &Value) -> Result<GenerationResult, GatewayError> {
        let choice = resp.pointer("/choices/0").ok_or_else(|| decode("missing choices[0]"))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| decode("missing message content"))?
            .to_string();
        let finish_reason = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("unknown").to_string();
        let mut rows = Vec::new();
        if let Some(positions) = choice.pointer("/logprobs/content").and_then(Value::as_array) {
            for (i, pos) in positions.iter().enumerate() {
                let mut scores: BTreeMap<String, f64> = BTreeMap::new();
                let mut add = |entry: &Value| {
                    if let (Some(tok), Some(lp)) =
                        (entry.get("token").and_then(Value::as_str), entry.get("logprob").and_then(Value::as_f64))
                    {
                        let slot = scores.entry(normalize_token(tok).to_string()).or_insert(f64::NEG_INFINITY);
                        *slot = slot.max(lp);
                    }
                };
                add(pos);
                for alt in pos.get("top_logprobs").and_then(Value::as_array).into_iter().flatten() {
                    add(alt);
                }
                if scores.is_empty() {
                    return Err(decode(format!("position {i} carries no token scores")));
                }
                rows.push(ScoreRow::new(i, scores));
            }
        }
        Ok(GenerationResult { text, rows, finish_reason, score_kind: ScoreKind::LogProb })
    }
}

impl GenerativeBackend for ChatCompletionsBackend {
    fn generate(&self, bundle: &PromptBundle, decoding: &Decoding) -> Result<GenerationResult, GatewayError> {
        let body = self.request_body(bundle, decoding)?;
        let resp = self.client.post_json("chat/completions", &body).map_err(service)?;
        Self::parse_response(&resp)
    }
}

/// Embedding endpoint. Text requests send `{"model", "input": text}`; image
/// requests send `{"model", "image": url}`. Both read `data[0].embedding`.
pub struct EmbeddingHttpBackend {
    client: JsonClient,
    model: String,
}

impl EmbeddingHttpBackend {
    pub fn new(client: JsonClient, model: &str) -> Self {
        Self { client, model: model.to_string() }
    }

    fn fetch(&self, body: Value) -> Result<Embedding, GatewayError> {
        let resp = self.client.post_json("embeddings", &body).map_err(service)?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| decode("missing data[0].embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| decode("non-numeric embedding entry")))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(EmbeddingVector::new(values)?)
    }
}

impl EmbeddingBackend for EmbeddingHttpBackend {
    fn embed_text(&self, text: &str) -> Result<Embedding, GatewayError> {
        self.fetch(json!({ "model": self.model, "input": text }))
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Embedding, GatewayError> {
        self.fetch(json!({ "model": self.model, "image": image_url(image)? }))
    }
}
