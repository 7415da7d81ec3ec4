use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{approx_tokens, request_digest, ModelBackend, ModelRequest, ModelResponse, TokenCounts};
use crate::error::{Error, Result};

/// An exact-match script entry keyed by [`request_digest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub match_key: String,
    pub response: String,
}

/// Human-authored script form. `role` is compared with the request's
/// `model_ref` (`"*"` matches any); `input_pattern` is a regex searched in
/// [`ModelRequest::transcript`]. The response may reference capture groups
/// (`$1`, `${name}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub role: String,
    pub input_pattern: String,
    pub response: String,
}

/// On-disk script fixture.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn merge(mut self, other: ScriptFile) -> Self {
        self.entries.extend(other.entries);
        self.rules.extend(other.rules);
        self
    }
}

struct CompiledRule {
    role: String,
    pattern: Regex,
    response: String,
}

/// Deterministic offline backend.
///
/// Lookup order: exact digest entries, then rules in declaration order. A
/// request matching neither fails with [`Error::Unscripted`].
pub struct ScriptedBackend {
    entries: HashMap<String, String>,
    rules: Vec<CompiledRule>,
    calls: AtomicUsize,
    resolved: Mutex<BTreeMap<String, String>>,
}

/// Builds a backend from exact entries. Duplicate match keys are rejected.
pub fn register_script(entries: Vec<ScriptEntry>) -> Result<ScriptedBackend> {
    ScriptedBackend::new(entries, Vec::new())
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>, rules: Vec<ScriptRule>) -> Result<Self> {
        let mut map = HashMap::with_capacity(entries.len());
        for e in entries {
            if map.insert(e.match_key.clone(), e.response).is_some() {
                return Err(Error::config(format!(
                    "duplicate script match_key {}",
                    e.match_key
                )));
            }
        }
        let rules = rules
            .into_iter()
            .map(|r| {
                let pattern = Regex::new(&r.input_pattern)
                    .map_err(|e| Error::config(format!("bad script pattern `{}`: {e}", r.input_pattern)))?;
                Ok(CompiledRule {
                    role: r.role,
                    pattern,
                    response: r.response,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries: map,
            rules,
            calls: AtomicUsize::new(0),
            resolved: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn from_file(file: ScriptFile) -> Result<Self> {
        Self::new(file.entries, file.rules)
    }

    /// Number of `complete` calls that reached this backend.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every request answered so far, as exact entries. Feeding these back
    /// through [`register_script`] replays the same run without rules.
    pub fn resolved_entries(&self) -> Vec<ScriptEntry> {
        self.resolved
            .lock()
            .expect("resolved map poisoned")
            .iter()
            .map(|(k, v)| ScriptEntry {
                match_key: k.clone(),
                response: v.clone(),
            })
            .collect()
    }

    fn lookup(&self, request: &ModelRequest, digest: &str) -> Option<String> {
        if let Some(hit) = self.entries.get(digest) {
            return Some(hit.clone());
        }
        let transcript = request.transcript();
        for rule in &self.rules {
            if rule.role != "*" && rule.role != request.model_ref {
                continue;
            }
            if let Some(caps) = rule.pattern.captures(&transcript) {
                let mut out = String::new();
                caps.expand(&rule.response, &mut out);
                return Some(out);
            }
        }
        None
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let digest = request_digest(request);
        let text = self.lookup(request, &digest).ok_or_else(|| Error::Unscripted {
            digest: digest.clone(),
        })?;
        self.resolved
            .lock()
            .expect("resolved map poisoned")
            .insert(digest, text.clone());
        Ok(ModelResponse {
            token_counts: TokenCounts {
                prompt: request.messages.iter().map(|m| approx_tokens(&m.content)).sum(),
                completion: approx_tokens(&text),
            },
            text,
            cached: false,
            latency_ms: 0,
        })
    }
}
