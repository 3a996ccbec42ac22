//! Blocking JSON-over-HTTP transport shared by the remote model adapters and
//! the generation services.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("{0}")]
    Other(String),
}

impl ServiceError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ServiceError::Status { status, .. } => *status == 429 || *status >= 500,
            ServiceError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. The delay doubles after each failure.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_attempts => {
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

const MAX_BODY: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct JsonClient {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    pub retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), api_key, agent, retry: RetryPolicy::default() }
    }

    /// Reads the bearer token from `env_var`; a missing variable is an error
    /// only when `required`.
    pub fn from_env(base_url: impl Into<String>, env_var: Option<&str>, required: bool) -> Result<Self, ServiceError> {
        let key = match env_var {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ if required => return Err(ServiceError::MissingCredentials(var.to_string())),
                _ => None,
            },
            None => None,
        };
        Ok(Self::new(base_url, key))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url, path.trim_start_matches('/'))
    }

    /// POSTs `body` to `path` and parses the JSON reply, retrying 429/5xx.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, ServiceError> {
        let url = self.url(path);
        let payload = serde_json::to_vec(body).map_err(|e| ServiceError::Decode(e.to_string()))?;
        self.retry.run(|| {
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send(&payload[..]).map_err(|e| ServiceError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .with_config()
                .limit(MAX_BODY)
                .read_to_string()
                .map_err(|e| ServiceError::Transport(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(ServiceError::Status { status, body: text });
            }
            serde_json::from_str(&text).map_err(|e| ServiceError::Decode(e.to_string()))
        })
    }

    pub fn get_bytes(&self, url: &str) -> Result<Vec<u8>, ServiceError> {
        self.retry.run(|| {
            let mut resp = self.agent.get(url).call().map_err(|e| ServiceError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let bytes = resp
                .body_mut()
                .with_config()
                .limit(MAX_BODY)
                .read_to_vec()
                .map_err(|e| ServiceError::Transport(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(ServiceError::Status { status, body: String::from_utf8_lossy(&bytes).into_owned() });
            }
            Ok(bytes)
        })
    }
}
