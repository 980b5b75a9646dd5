//! Chat-completion gateway: provider abstraction, schema-checked structured
//! output with bounded retries, and record/replay providers for offline runs.

pub(crate) mod http;
mod replay;
mod schema;

pub use http::{HttpChatConfig, HttpChatProvider};
pub use replay::{RecordingProvider, ReplayProvider, ReplayRecord, ReplayStore, ScriptedProvider};
pub use schema::{FieldSchema, ObjectSchema, OutputSchema, SchemaNode};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("structured output failed validation after {attempts} attempt(s): {reason}")]
    SchemaValidation { attempts: u32, reason: String },
    #[error("no recorded response for request fingerprint {0}")]
    ReplayMiss(String),
    #[error("replay store i/o: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_schema: Option<OutputSchema>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sentences_hint: Option<u32>,
}

impl ChatRequest {
    pub fn new(
        system_prompt: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
    ) -> Result<Self, GatewayError> {
        let req = Self {
            system_prompt: system_prompt.into(),
            messages,
            output_schema: None,
            temperature,
            max_sentences_hint: None,
        };
        req.check()?;
        Ok(req)
    }

    pub fn with_schema(mut self, schema: OutputSchema) -> Self {
        self.output_schema = Some(schema);
        self
    }

    pub fn with_max_sentences(mut self, n: u32) -> Self {
        self.max_sentences_hint = Some(n);
        self
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }

    /// Stable hex SHA-256 over system prompt, messages, output schema and
    /// temperature.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            system_prompt: &'a str,
            messages: &'a [ChatMessage],
            output_schema: &'a Option<OutputSchema>,
            temperature: f64,
        }
        let key = Key {
            system_prompt: &self.system_prompt,
            messages: &self.messages,
            output_schema: &self.output_schema,
            temperature: self.temperature,
        };
        let bytes = serde_json::to_vec(&key).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Concatenated prompt text, for inspection and traces.
    pub fn prompt_text(&self) -> String {
        let mut out = self.system_prompt.clone();
        for m in &self.messages {
            out.push_str("\n\n");
            out.push_str(&m.content);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provider_meta: BTreeMap<String, Value>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn structured(value: Value) -> Self {
        Self {
            structured: Some(value),
            ..Self::default()
        }
    }
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

pub const DEFAULT_SCHEMA_RETRIES: u32 = 2;

/// Front door for every prompt call. Enforces structured output against the
/// request's schema, retrying up to `max_retries` times.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    max_retries: u32,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            max_retries: DEFAULT_SCHEMA_RETRIES,
        }
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.check()?;
        let Some(schema) = &request.output_schema else {
            return self.provider.complete(request);
        };
        let attempts = self.max_retries + 1;
        let mut reason = String::new();
        for attempt in 1..=attempts {
            let mut resp = self.provider.complete(request)?;
            let value = resp
                .structured
                .take()
                .or_else(|| resp.text.as_deref().and_then(extract_json));
            match value {
                Some(v) => match schema.validate(&v) {
                    Ok(()) => {
                        resp.structured = Some(v);
                        return Ok(resp);
                    }
                    Err(e) => reason = e,
                },
                None => reason = "response carried no JSON object".into(),
            }
            warn!(schema = %schema.name, attempt, %reason, "structured output rejected");
        }
        Err(GatewayError::SchemaValidation { attempts, reason })
    }
}

/// Pulls a JSON object out of free text, tolerating code fences and
/// surrounding prose.
pub fn extract_json(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}
