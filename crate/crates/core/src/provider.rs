//! Shared plumbing for remote providers: JSON-over-HTTP and retry policy.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;

/// Connection settings for a remote provider. The auth token is never stored
/// here, only the name of the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub endpoint: String,
    pub model: String,
    pub token_env: String,
}

impl RemoteSpec {
    pub fn token(&self) -> Result<Option<String>, ProviderError> {
        if self.token_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.token_env) {
            Ok(t) => Ok(Some(t)),
            Err(_) => Err(ProviderError::MissingCredential(self.token_env.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. Delay doubles after each failure.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.attempts.max(1) => {
                    log::warn!("provider call failed (attempt {attempt}): {e}");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// POSTs `body` as JSON and returns the parsed JSON response.
pub(crate) fn post_json(
    spec: &RemoteSpec,
    body: &serde_json::Value,
) -> Result<serde_json::Value, ProviderError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let mut req = client.post(&spec.endpoint).json(body);
    if let Some(token) = spec.token()? {
        req = req.bearer_auth(token);
    }
    let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::Http {
            status: status.as_u16(),
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
}
