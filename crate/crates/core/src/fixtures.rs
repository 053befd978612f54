//! Authoring helpers for mock-LLM fixture directories.
//!
//! Responses are written by hand in "section" files, where a line
//! `=== key` opens a section and every following line up to the next header
//! is its body. The helpers render the exact prompts the engine will send and
//! store each response under that prompt's fingerprint.

use std::collections::BTreeMap;

use crate::corpus::{CorpusDoc, QAItem};
use crate::error::{Error, Result};
use crate::extraction::{chunk_document, document_body, BuildConfig};
use crate::kb::{ChunkId, DocumentId};
use crate::llm::{LlmRequest, MockLlm};
use crate::prompts;

/// Parses `=== key` sections. Bodies keep their inner newlines; surrounding
/// blank lines are trimmed.
pub fn parse_sections(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    let flush = |cur: Option<(String, Vec<&str>)>, out: &mut BTreeMap<String, String>| -> Result<()> {
        if let Some((k, lines)) = cur {
            let body = lines.join("\n").trim_matches('\n').to_string();
            if out.insert(k.clone(), body).is_some() {
                return Err(Error::Invalid(format!("duplicate section `{k}`")));
            }
        }
        Ok(())
    };
    for line in text.lines() {
        if let Some(key) = line.strip_prefix("=== ") {
            flush(current.take(), &mut out)?;
            current = Some((key.trim().to_string(), Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        } else if !line.trim().is_empty() {
            return Err(Error::Invalid(format!("text before the first section header: {line:?}")));
        }
    }
    flush(current, &mut out)?;
    Ok(out)
}

/// Stores extraction responses keyed by chunk id (`doc#ordinal`). Every
/// key must name a chunk the build will produce.
pub fn add_extractions(
    llm: &mut MockLlm,
    corpus: &[CorpusDoc],
    config: &BuildConfig,
    responses: &BTreeMap<String, String>,
) -> Result<()> {
    let mut used = 0;
    for doc in corpus {
        let doc_id = DocumentId::new(doc.id.as_str())?;
        for span in chunk_document(&document_body(doc), config.window, config.overlap)? {
            let key = ChunkId::from_parts(&doc_id, span.ordinal);
            if let Some(resp) = responses.get(key.as_str()) {
                let req = prompts::extraction_request(&config.language, &config.entity_types, &span.text);
                llm.insert(&req, resp.as_str());
                used += 1;
            }
        }
    }
    if used != responses.len() {
        return Err(Error::Invalid(format!(
            "{} extraction sections do not match any chunk",
            responses.len() - used
        )));
    }
    Ok(())
}

/// Stores query-entity responses keyed by question text.
pub fn add_query_entities(llm: &mut MockLlm, responses: &BTreeMap<String, String>) {
    for (q, resp) in responses {
        llm.insert(&prompts::query_entities_request(q), resp.as_str());
    }
}

/// Stores an answer for an already rendered context.
pub fn add_answer(llm: &mut MockLlm, context: &str, answer: &str) {
    llm.insert(&LlmRequest::user(context), answer);
}

/// Stores a judge verdict for one generated answer.
pub fn add_verdict(llm: &mut MockLlm, item: &QAItem, generated: &str, verdict_json: &str) {
    let req = prompts::judge_request(&item.question, generated, &item.answer, &item.aliases);
    llm.insert(&req, verdict_json);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse() {
        let s = parse_sections("=== a\nline1\nline2\n\n=== b#0\n\nx\n").unwrap();
        assert_eq!(s["a"], "line1\nline2");
        assert_eq!(s["b#0"], "x");
        assert!(parse_sections("stray\n=== a\n").is_err());
        assert!(parse_sections("=== a\n=== a\n").is_err());
    }

    #[test]
    fn unknown_chunk_key_rejected() {
        let corpus = vec![CorpusDoc { id: "d".into(), title: String::new(), text: "hello".into() }];
        let mut llm = MockLlm::new();
        let cfg = BuildConfig::default();
        let ok = BTreeMap::from([("d#0".to_string(), "r".to_string())]);
        add_extractions(&mut llm, &corpus, &cfg, &ok).unwrap();
        assert_eq!(llm.len(), 1);
        let bad = BTreeMap::from([("d#1".to_string(), "r".to_string())]);
        assert!(add_extractions(&mut llm, &corpus, &cfg, &bad).is_err());
    }
}
