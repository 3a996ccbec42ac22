//! Text- and image-generation services used to synthesize demonstrations.

use std::collections::HashMap;
use std::sync::Mutex;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::http::{JsonClient, ServiceError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextReply {
    pub text: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageReply {
    pub bytes: Vec<u8>,
    pub model: String,
}

pub trait TextGenClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<TextReply, ServiceError>;
}

pub trait ImageGenClient: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<ImageReply, ServiceError>;
}

type TextHandler = dyn Fn(&str, usize) -> Result<String, ServiceError> + Send + Sync;
type ImageHandler = dyn Fn(&str, usize) -> Result<Vec<u8>, ServiceError> + Send + Sync;

/// Per-prompt call counter plus a log of every prompt received, in order.
#[derive(Default)]
struct RequestLog {
    prompts: Vec<String>,
    per_prompt: HashMap<String, usize>,
}

impl RequestLog {
    fn record(&mut self, prompt: &str) -> usize {
        self.prompts.push(prompt.to_string());
        let n = self.per_prompt.entry(prompt.to_string()).or_default();
        *n += 1;
        *n - 1
    }
}

/// Offline text service. The handler receives the prompt and how many times
/// that exact prompt was seen before, so scripted retries stay deterministic
/// under concurrent use.
pub struct ScriptedTextGen {
    model: String,
    handler: Box<TextHandler>,
    log: Mutex<RequestLog>,
}

impl ScriptedTextGen {
    pub fn new(
        model: impl Into<String>,
        handler: impl Fn(&str, usize) -> Result<String, ServiceError> + Send + Sync + 'static,
    ) -> Self {
        Self { model: model.into(), handler: Box::new(handler), log: Mutex::default() }
    }

    /// Replies with queued responses per prompt; the last entry repeats.
    pub fn from_table(model: impl Into<String>, table: HashMap<String, Vec<String>>) -> Self {
        Self::new(model, move |prompt, n| {
            let replies = table
                .get(prompt)
                .ok_or_else(|| ServiceError::Other(format!("no scripted reply for prompt: {prompt}")))?;
            Ok(replies[n.min(replies.len() - 1)].clone())
        })
    }

    pub fn requests(&self) -> Vec<String> {
        self.log.lock().expect("request log poisoned").prompts.clone()
    }
}

impl TextGenClient for ScriptedTextGen {
    fn complete(&self, prompt: &str) -> Result<TextReply, ServiceError> {
        let n = self.log.lock().expect("request log poisoned").record(prompt);
        (self.handler)(prompt, n).map(|text| TextReply { text, model: self.model.clone() })
    }
}

pub struct ScriptedImageGen {
    model: String,
    handler: Box<ImageHandler>,
    log: Mutex<RequestLog>,
}

impl ScriptedImageGen {
    pub fn new(
        model: impl Into<String>,
        handler: impl Fn(&str, usize) -> Result<Vec<u8>, ServiceError> + Send + Sync + 'static,
    ) -> Self {
        Self { model: model.into(), handler: Box::new(handler), log: Mutex::default() }
    }

    /// Always returns the same image.
    pub fn constant(model: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self::new(model, move |_, _| Ok(bytes.clone()))
    }

    pub fn requests(&self) -> Vec<String> {
        self.log.lock().expect("request log poisoned").prompts.clone()
    }
}

impl ImageGenClient for ScriptedImageGen {
    fn generate(&self, prompt: &str) -> Result<ImageReply, ServiceError> {
        let n = self.log.lock().expect("request log poisoned").record(prompt);
        (self.handler)(prompt, n).map(|bytes| ImageReply { bytes, model: self.model.clone() })
    }
}

/// Chat-completion text service. Decoding parameters are left at the
/// service defaults.
pub struct ChatTextGen {
    client: JsonClient,
    model: String,
}

impl ChatTextGen {
    pub fn new(client: JsonClient, model: impl Into<String>) -> Self {
        Self { client, model: model.into() }
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

impl TextGenClient for ChatTextGen {
    fn complete(&self, prompt: &str) -> Result<TextReply, ServiceError> {
        let resp = self.client.post_json("chat/completions", &self.request_body(prompt))?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ServiceError::Decode("missing choices[0].message.content".into()))?;
        let model = resp.get("model").and_then(Value::as_str).unwrap_or(&self.model);
        Ok(TextReply { text: text.to_string(), model: model.to_string() })
    }
}

/// Image-generation endpoint answering with base64 data or a download URL.
pub struct HttpImageGen {
    client: JsonClient,
    model: String,
    pub size: Option<String>,
}

impl HttpImageGen {
    pub fn new(client: JsonClient, model: impl Into<String>) -> Self {
        Self { client, model: model.into(), size: None }
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "prompt": prompt,
            "n": 1,
            "response_format": "b64_json",
        });
        if let Some(size) = &self.size {
            body["size"] = json!(size);
        }
        body
    }
}

impl ImageGenClient for HttpImageGen {
    fn generate(&self, prompt: &str) -> Result<ImageReply, ServiceError> {
        let resp = self.client.post_json("images/generations", &self.request_body(prompt))?;
        let entry = resp.pointer("/data/0").ok_or_else(|| ServiceError::Decode("missing data[0]".into()))?;
        let bytes = if let Some(b64) = entry.get("b64_json").and_then(Value::as_str) {
            base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| ServiceError::Decode(format!("bad base64 image: {e}")))?
        } else if let Some(url) = entry.get("url").and_then(Value::as_str) {
            self.client.get_bytes(url)?
        } else {
            return Err(ServiceError::Decode("data[0] has neither b64_json nor url".into()));
        };
        Ok(ImageReply { bytes, model: self.model.clone() })
    }
}
