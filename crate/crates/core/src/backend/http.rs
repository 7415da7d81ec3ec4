use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{approx_tokens, ModelBackend, ModelRequest, ModelResponse, TokenCounts};
use crate::error::{Error, Result};

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_ENV: &str = "ADOPT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    /// Overrides the request's `model_ref` when set.
    pub model: Option<String>,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            model: None,
            max_retries: 3,
            timeout_secs: 120,
            backoff_ms: 500,
        }
    }
}

/// OpenAI-compatible `POST /v1/chat/completions` client.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: HttpConfig, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::config(format!("http client: {e}")))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn body(&self, request: &ModelRequest) -> serde_json::Value {
        let model = self.config.model.as_deref().unwrap_or(&request.model_ref);
        json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "seed": request.seed,
            "stream": false,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<(String, Option<Usage>)> {
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| Error::Backend {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Backend {
                message: format!("HTTP {status}: {text}"),
                retryable: status.as_u16() == 429 || status.is_server_error(),
            });
        }
        let parsed: ChatResponse = resp.json().map_err(|e| Error::Backend {
            message: format!("unparseable completion: {e}"),
            retryable: false,
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend {
                message: "completion has no content".into(),
                retryable: false,
            })?;
        Ok((content, parsed.usage))
    }
}

impl ModelBackend for HttpBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        request.validate()?;
        let body = self.body(request);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok((text, usage)) => {
                    let token_counts = match usage {
                        Some(u) => TokenCounts {
                            prompt: u.prompt_tokens,
                            completion: u.completion_tokens,
                        },
                        None => TokenCounts {
                            prompt: 0,
                            completion: approx_tokens(&text),
                        },
                    };
                    return Ok(ModelResponse {
                        text,
                        token_counts,
                        cached: false,
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Err(Error::Backend {
                    retryable: true,
                    message,
                }) => {
                    if attempt >= self.config.max_retries {
                        return Err(Error::Backend {
                            message: format!("{message} (gave up after {} attempts)", attempt + 1),
                            retryable: true,
                        });
                    }
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(
                        self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(6)),
                    ));
                }
                Err(e) => return Err(e),
            }
        }
    }
}
