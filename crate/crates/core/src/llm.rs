//! LLM client contract with a fixture-replay mock and an HTTP client.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ProviderError, Result};
use crate::provider::{post_json, RemoteSpec, RetryPolicy};
use crate::tokens::{estimate_tokens, TokenKind, TokenLedger};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRequest {
    pub system: Option<String>,
    pub user: String,
}

impl LlmRequest {
    pub fn user(text: impl Into<String>) -> Self {
        Self { system: None, user: text.into() }
    }

    pub fn with_system(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: Some(system.into()),
            user: user.into(),
        }
    }

    /// Hex SHA-256 over the system and user text. Names mock fixture files.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_deref().unwrap_or("").as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }

    fn char_len(&self) -> String {
        format!("{}{}", self.system.as_deref().unwrap_or(""), self.user)
    }
}

pub trait LlmClient: Send + Sync {
    /// Returns the raw completion text and records token usage.
    fn complete(&self, req: &LlmRequest, ledger: &TokenLedger) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LlmSpec {
    /// Replays responses from a directory of files named by request hash.
    Mock { fixtures: String },
    Remote {
        remote: RemoteSpec,
        #[serde(default)]
        temperature: f64,
    },
}

impl LlmSpec {
    pub fn build(&self) -> Result<Arc<dyn LlmClient>> {
        Ok(match self {
            LlmSpec::Mock { fixtures } => Arc::new(MockLlm::from_dir(fixtures)?),
            LlmSpec::Remote { remote, temperature } => Arc::new(RemoteLlm {
                spec: remote.clone(),
                temperature: *temperature,
                retry: RetryPolicy::default(),
            }),
        })
    }
}

/// Deterministic replay of canned responses keyed by request fingerprint.
#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    responses: HashMap<String, String>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every file in `dir`; the file stem is the request fingerprint
    /// and the content is the raw response.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut responses = HashMap::new();
        if !dir.exists() {
            return Ok(Self { responses });
        }
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if !path.is_file() {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            responses.insert(stem.to_string(), text);
        }
        Ok(Self { responses })
    }

    pub fn insert(&mut self, req: &LlmRequest, response: impl Into<String>) {
        self.responses.insert(req.fingerprint(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Writes every stored response to `dir` as `<fingerprint>.txt`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut keys: Vec<&String> = self.responses.keys().collect();
        keys.sort();
        for k in keys {
            let path = dir.join(format!("{k}.txt"));
            fs::write(&path, &self.responses[k]).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, req: &LlmRequest, ledger: &TokenLedger) -> Result<String, ProviderError> {
        let key = req.fingerprint();
        let text = self
            .responses
            .get(&key)
            .cloned()
            .ok_or(ProviderError::FixtureMissing(key))?;
        ledger.add(TokenKind::Prompt, estimate_tokens(&req.char_len()));
        ledger.add(TokenKind::Completion, estimate_tokens(&text));
        Ok(text)
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    pub spec: RemoteSpec,
    pub temperature: f64,
    pub retry: RetryPolicy,
}

impl LlmClient for RemoteLlm {
    fn complete(&self, req: &LlmRequest, ledger: &TokenLedger) -> Result<String, ProviderError> {
        let mut messages = Vec::new();
        if let Some(sys) = &req.system {
            messages.push(serde_json::json!({"role": "system", "content": sys}));
        }
        messages.push(serde_json::json!({"role": "user", "content": req.user}));
        let body = serde_json::json!({
            "model": self.spec.model,
            "temperature": self.temperature,
            "messages": messages,
        });
        let resp = self.retry.run(|| post_json(&self.spec, &body))?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))?
            .to_string();
        let prompt = resp
            .pointer("/usage/prompt_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or_else(|| estimate_tokens(&req.char_len()));
        let completion = resp
            .pointer("/usage/completion_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or_else(|| estimate_tokens(&text));
        ledger.add(TokenKind::Prompt, prompt);
        ledger.add(TokenKind::Completion, completion);
        Ok(text)
    }
}
