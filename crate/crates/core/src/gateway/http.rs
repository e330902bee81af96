//! Live backend speaking the common chat-completions HTTP contract.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, BackendReply, CompletionRequest, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Environment variable holding the bearer token; unset means no auth.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub context_limit: Option<u64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            api_key_env: default_key_env(),
            context_limit: None,
            timeout_secs: default_timeout(),
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    context_limit: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: &HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Fatal {
                message: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(HttpBackend {
            client,
            endpoint: config.endpoint.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            context_limit: config.context_limit,
        })
    }
}

fn classify_status(status: u16, body: String) -> BackendError {
    match status {
        429 => BackendError::RateLimited { billed: None },
        500..=599 => BackendError::Server {
            status,
            message: body,
            billed: None,
        },
        400 | 413 if body.contains("context_length") || body.contains("maximum context") => {
            BackendError::ContextLength { message: body }
        }
        _ => BackendError::Fatal {
            message: format!("HTTP {status}: {body}"),
        },
    }
}

impl Backend for HttpBackend {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let body = json!({
            "model": req.model_id,
            "messages": [{ "role": "user", "content": req.prompt.text }],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| BackendError::Transport {
            message: e.to_string(),
            billed: None,
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transport {
            message: e.to_string(),
            billed: None,
        })?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| BackendError::Fatal {
            message: format!("malformed chat-completions response: {e}"),
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal {
                message: "response has no message content".into(),
            })?;
        Ok(BackendReply {
            text: content,
            usage: parsed
                .usage
                .map(|u| Usage::new(u.prompt_tokens, u.completion_tokens)),
        })
    }

    fn context_limit(&self) -> Option<u64> {
        self.context_limit
    }
}
