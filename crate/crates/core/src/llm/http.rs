use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError, Role};

/// Connection settings for an OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout() -> u64 {
    60
}

pub struct HttpChatProvider {
    config: HttpChatConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn new(config: HttpChatConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent = http_agent(config.timeout_secs);
        Self {
            config,
            agent,
            api_key,
        }
    }

    /// Request body in the chat-completions wire format.
    pub fn wire_body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(schema) = &request.output_schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {
                    "name": schema.name,
                    "schema": schema.to_json_schema(),
                    "strict": false,
                }
            });
        }
        body
    }
}

pub(crate) fn http_agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build()
        .into()
}

pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, GatewayError> {
    let mut req = agent.post(url);
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let resp = req
        .send_json(body)
        .map_err(|e| GatewayError::ProviderUnavailable(format!("{url}: {e}")))?;
    resp.into_body()
        .read_json::<Value>()
        .map_err(|e| GatewayError::ProviderUnavailable(format!("{url}: bad response body: {e}")))
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let v = post_json(&self.agent, &url, self.api_key.as_deref(), &self.wire_body(request))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::ProviderUnavailable(format!("{url}: no message content")))?;

        let mut meta = BTreeMap::new();
        for key in ["model", "usage", "id"] {
            if let Some(x) = v.get(key) {
                meta.insert(key.to_string(), x.clone());
            }
        }
        let mut resp = ChatResponse {
            provider_meta: meta,
            ..ChatResponse::default()
        };
        if request.output_schema.is_some() {
            match super::extract_json(content) {
                Some(s) => resp.structured = Some(s),
                None => resp.text = Some(content.to_string()),
            }
        } else {
            resp.text = Some(content.to_string());
        }
        Ok(resp)
    }
}
