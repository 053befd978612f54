//! Token accounting across embedding and LLM calls.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Embedding,
    Prompt,
    Completion,
}

/// Thread-safe token counters. Increments are atomic per call.
#[derive(Debug, Default)]
pub struct TokenLedger {
    embedding: AtomicU64,
    prompt: AtomicU64,
    completion: AtomicU64,
}

/// Point-in-time copy of a [`TokenLedger`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub embedding_tokens: u64,
    pub llm_prompt_tokens: u64,
    pub llm_completion_tokens: u64,
    pub total: u64,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` tokens of `kind`. Negative counts are rejected.
    pub fn record_tokens(&self, kind: TokenKind, count: i64) -> Result<()> {
        if count < 0 {
            return Err(Error::Invalid(format!("negative token count {count}")));
        }
        self.add(kind, count as u64);
        Ok(())
    }

    pub fn add(&self, kind: TokenKind, count: u64) {
        let slot = match kind {
            TokenKind::Embedding => &self.embedding,
            TokenKind::Prompt => &self.prompt,
            TokenKind::Completion => &self.completion,
        };
        slot.fetch_add(count, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> TokenUsage {
        let embedding_tokens = self.embedding.load(Ordering::Relaxed);
        let llm_prompt_tokens = self.prompt.load(Ordering::Relaxed);
        let llm_completion_tokens = self.completion.load(Ordering::Relaxed);
        TokenUsage {
            embedding_tokens,
            llm_prompt_tokens,
            llm_completion_tokens,
            total: embedding_tokens + llm_prompt_tokens + llm_completion_tokens,
        }
    }
}

/// Token estimate used by the mock providers: one token per four characters,
/// rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
