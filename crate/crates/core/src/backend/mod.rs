//! Completion backends.
//!
//! Pipeline steps and optimizer roles both talk to models through
//! [`ModelBackend`]. Two implementations ship: [`ScriptedBackend`], which
//! answers from a fixture script and never touches the network, and
//! [`HttpBackend`], which speaks the OpenAI-compatible chat completions
//! protocol. Either can be wrapped in a [`CachingBackend`].

mod cache;
mod digest;
mod http;
mod routing;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::CachingBackend;
pub use digest::request_digest;
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use routing::RoutingBackend;
pub use scripted::{register_script, ScriptEntry, ScriptFile, ScriptRule, ScriptedBackend};

/// Decoding defaults: greedy decoding with the full nucleus.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_TOP_P: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl fmt::Display for MessageRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageRole::System => "system",
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_ref: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl ModelRequest {
    pub fn new(model_ref: impl Into<String>, messages: Vec<Message>, seed: u64) -> Self {
        Self {
            model_ref: model_ref.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::contract(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::contract(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }

    /// Flattens the conversation to `### role\ncontent\n` blocks. Script rules
    /// match against this form.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str("### ");
            out.push_str(&m.role.to_string());
            out.push('\n');
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub token_counts: TokenCounts,
    pub cached: bool,
    /// Wall time reported by the backend. Scripted and cached responses report 0.
    pub latency_ms: u64,
}

pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        (**self).complete(request)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        (**self).complete(request)
    }
}

/// Whitespace token count; used where the backend reports no usage.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_defaults_are_greedy() {
        let r = ModelRequest::new("m", vec![Message::user("hi")], 0);
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.top_p, 1.0);
        r.validate().unwrap();
    }

    #[test]
    fn rejects_bad_decoding_params() {
        let mut r = ModelRequest::new("m", vec![], 0);
        r.top_p = 0.0;
        assert!(r.validate().is_err());
        r.top_p = 1.0;
        r.temperature = -0.1;
        assert!(r.validate().is_err());
    }

    #[test]
    fn transcript_layout() {
        let r = ModelRequest::new("m", vec![Message::system("be terse"), Message::user("q")], 0);
        assert_eq!(r.transcript(), "### system\nbe terse\n### user\nq\n");
    }
}
