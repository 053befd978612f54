//! Bidirectional text/graph retrieval.
//!
//! A corpus is turned into a [`kb::KnowledgeBase`] of chunks, an entity and
//! relation graph, and the provenance mapping between them. Queries run a
//! dense-vector channel and a beam search over the graph side by side, then
//! let each channel re-rank or confirm the other before the evidence is
//! consolidated into an answer prompt.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod exec;
pub mod extraction;
pub mod fixtures;
pub mod kb;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod search;
pub mod synthetic;
pub mod synergy;
pub mod tokens;

pub use error::{Error, ProviderError, Result};
