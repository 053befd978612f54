//! Document chunking, LLM-driven entity/relation extraction and query entity
//! extraction with a persistent cache.

mod build;
mod chunking;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, ProviderError, Result};
use crate::llm::LlmClient;
use crate::prompts::{self, END_SIGNAL};
use crate::tokens::TokenLedger;

pub use crate::kb::normalize_entity_name;
pub use build::{build_kb, document_body, BuildConfig, BuildOutput, BuildReport, ChunkFailure};
pub use chunking::{chunk_document, reassemble, ChunkSpan, DEFAULT_OVERLAP, DEFAULT_WINDOW};

/// Entity categories offered to the extractor when none are configured.
pub fn default_entity_types() -> Vec<String> {
    ["person", "location", "organization", "event", "concept", "work", "other"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ExtractionRecord {
    Entity {
        name: String,
        category: String,
        desc: String,
    },
    Relation {
        source: String,
        target: String,
        keywords: Vec<String>,
        desc: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedExtraction {
    pub records: Vec<ExtractionRecord>,
    pub diagnostics: Vec<String>,
    pub malformed_lines: usize,
    pub saw_end_signal: bool,
}

impl ParsedExtraction {
    /// The response produced nothing usable.
    pub fn is_garbage(&self) -> bool {
        self.records.is_empty() && self.malformed_lines > 0
    }
}

fn str_field<'a>(obj: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str))
}

fn parse_record(line: &str) -> std::result::Result<ExtractionRecord, String> {
    let obj: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or("missing \"type\"")?;
    let desc = str_field(&obj, &["desc", "description"]).unwrap_or("").trim().to_string();
    match kind.to_ascii_lowercase().as_str() {
        "entity" => {
            let name = str_field(&obj, &["name"]).ok_or("entity without \"name\"")?;
            if name.trim().is_empty() {
                return Err("entity with empty name".into());
            }
            Ok(ExtractionRecord::Entity {
                name: name.to_string(),
                category: str_field(&obj, &["category", "entity_type"]).unwrap_or("other").to_string(),
                desc,
            })
        }
        "relation" | "relationship" => {
            let source = str_field(&obj, &["source"]).ok_or("relation without \"source\"")?;
            let target = str_field(&obj, &["target"]).ok_or("relation without \"target\"")?;
            if source.trim().is_empty() || target.trim().is_empty() {
                return Err("relation with empty endpoint".into());
            }
            let keywords = match obj.get("keywords") {
                Some(Value::Array(items)) => items
                    .iter()
                    .filter_map(Value::as_str)
                    .flat_map(|s| s.split(','))
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                Some(Value::String(s)) => s
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                _ => Vec::new(),
            };
            Ok(ExtractionRecord::Relation {
                source: source.to_string(),
                target: target.to_string(),
                keywords,
                desc,
            })
        }
        other => Err(format!("unknown record type {other:?}")),
    }
}

/// Parses a JSON-lines extraction response.
///
/// Reading stops at the end signal. Malformed lines are skipped with a
/// diagnostic, records may appear in any order, and a missing end signal only
/// produces a warning.
pub fn parse_extraction(response: &str) -> ParsedExtraction {
    let mut out = ParsedExtraction::default();
    for (i, line) in response.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with("```") {
            continue;
        }
        if t.contains(END_SIGNAL) {
            out.saw_end_signal = true;
            break;
        }
        match parse_record(t) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                out.malformed_lines += 1;
                out.diagnostics.push(format!("line {}: {e}", i + 1));
            }
        }
    }
    if !out.saw_end_signal {
        out.diagnostics.push("warning: response ended without end signal".into());
    }
    out
}

/// Runs the extraction prompt over one chunk of text. Retries are the
/// client's responsibility.
pub fn extract_knowledge(
    llm: &dyn LlmClient,
    ledger: &TokenLedger,
    text: &str,
    entity_types: &[String],
    language: &str,
) -> Result<ParsedExtraction, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let req = prompts::extraction_request(language, entity_types, text);
    let response = llm.complete(&req, ledger)?;
    Ok(parse_extraction(&response))
}

/// Query-string hash -> extracted entity strings. Persisted as JSON next to
/// the knowledge base.
#[derive(Debug, Default)]
pub struct QueryEntityCache {
    entries: Mutex<BTreeMap<String, Vec<String>>>,
}

pub const QUERY_CACHE_FILE: &str = "query_cache.json";

impl QueryEntityCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(query: &str) -> String {
        hex::encode(Sha256::digest(query.as_bytes()))
    }

    pub fn get(&self, query: &str) -> Option<Vec<String>> {
        self.entries.lock().expect("cache lock").get(&Self::key(query)).cloned()
    }

    pub fn insert(&self, query: &str, entities: Vec<String>) {
        self.entries
            .lock()
            .expect("cache lock")
            .insert(Self::key(query), entities);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads a cache file; a missing file yields an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        Ok(Self { entries: Mutex::new(entries) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let entries = self.entries.lock().expect("cache lock");
        let mut text = serde_json::to_string_pretty(&*entries)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryEntities {
    pub entities: Vec<String>,
    pub cached: bool,
    pub diagnostic: Option<String>,
}

/// Pulls the first JSON string array out of an LLM response.
pub fn parse_entity_list(response: &str) -> Option<Vec<String>> {
    let start = response.find('[')?;
    let end = response.rfind(']')?;
    if end < start {
        return None;
    }
    let list: Vec<String> = serde_json::from_str(&response[start..=end]).ok()?;
    Some(
        list.into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    )
}

/// Extracts the core entities of a query, consulting the cache first. Any
/// failure degrades to an empty list with a diagnostic.
pub fn extract_query_entities(
    llm: &dyn LlmClient,
    cache: &QueryEntityCache,
    ledger: &TokenLedger,
    query: &str,
) -> QueryEntities {
    if let Some(entities) = cache.get(query) {
        return QueryEntities { entities, cached: true, diagnostic: None };
    }
    let req = prompts::query_entities_request(query);
    let response = match llm.complete(&req, ledger) {
        Ok(r) => r,
        Err(e) => {
            return QueryEntities {
                entities: Vec::new(),
                cached: false,
                diagnostic: Some(format!("query entity extraction failed: {e}")),
            }
        }
    };
    match parse_entity_list(&response) {
        Some(entities) => {
            cache.insert(query, entities.clone());
            QueryEntities { entities, cached: false, diagnostic: None }
        }
        None => QueryEntities {
            entities: Vec::new(),
            cached: false,
            diagnostic: Some("query entity response is not a JSON string array".into()),
        },
    }
}
