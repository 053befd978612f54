//! Corpus and QA record files, plus adapters for MuSiQue and HotpotQA.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// One evaluation question with its gold answer and supporting documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub gold_support_docs: BTreeSet<String>,
}

/// Reads a JSON-lines file, skipping blank lines. Errors carry the 1-based
/// line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusDoc>> {
    let docs: Vec<CorpusDoc> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for d in &docs {
        if d.id.trim().is_empty() {
            return Err(Error::Invalid("corpus record with empty id".into()));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate corpus id `{}`", d.id)));
        }
    }
    Ok(docs)
}

pub fn read_qa(path: impl AsRef<Path>) -> Result<Vec<QAItem>> {
    read_jsonl(path)
}

/// Documents and questions converted from a native dataset file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Converted {
    pub docs: Vec<CorpusDoc>,
    pub items: Vec<QAItem>,
}

/// Assigns document ids from titles. The same title with the same text maps
/// to one document; a title reused for different text gets a numeric suffix.
#[derive(Default)]
struct DocInterner {
    by_content: HashMap<(String, String), String>,
    title_uses: HashMap<String, usize>,
    docs: Vec<CorpusDoc>,
}

impl DocInterner {
    fn intern(&mut self, title: &str, text: &str) -> String {
        let key = (title.to_string(), text.to_string());
        if let Some(id) = self.by_content.get(&key) {
            return id.clone();
        }
        let base = if title.trim().is_empty() { "untitled" } else { title.trim() };
        let n = self.title_uses.entry(base.to_string()).or_insert(0);
        *n += 1;
        let id = if *n == 1 { base.to_string() } else { format!("{base} ({n})") };
        self.by_content.insert(key, id.clone());
        self.docs.push(CorpusDoc { id: id.clone(), title: title.to_string(), text: text.to_string() });
        id
    }
}

#[derive(Deserialize)]
struct MusiqueParagraph {
    title: String,
    paragraph_text: String,
    #[serde(default)]
    is_supporting: bool,
}

#[derive(Deserialize)]
struct MusiqueRecord {
    id: String,
    question: String,
    answer: String,
    #[serde(default)]
    answer_aliases: Vec<String>,
    paragraphs: Vec<MusiqueParagraph>,
}

/// Converts MuSiQue-Ans JSON lines. Every titled paragraph becomes a
/// document; supporting paragraphs become gold documents.
pub fn convert_musique(path: impl AsRef<Path>) -> Result<Converted> {
    let records: Vec<MusiqueRecord> = read_jsonl(path)?;
    let mut docs = DocInterner::default();
    let mut items = Vec::new();
    for r in records {
        let mut gold = BTreeSet::new();
        for p in &r.paragraphs {
            let id = docs.intern(&p.title, &p.paragraph_text);
            if p.is_supporting {
                gold.insert(id);
            }
        }
        items.push(QAItem {
            id: r.id,
            question: r.question,
            answer: r.answer,
            aliases: r.answer_aliases,
            gold_support_docs: gold,
        });
    }
    Ok(Converted { docs: docs.docs, items })
}

#[derive(Deserialize)]
struct HotpotRecord {
    #[serde(rename = "_id")]
    id: String,
    question: String,
    answer: String,
    supporting_facts: Vec<(String, serde_json::Value)>,
    context: Vec<(String, Vec<String>)>,
}

/// Converts a HotpotQA distractor-setting JSON array. Each context entry
/// (title plus sentences) becomes a document; titles named in the
/// supporting facts become gold documents.
pub fn convert_hotpotqa(path: impl AsRef<Path>) -> Result<Converted> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<HotpotRecord> = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let mut docs = DocInterner::default();
    let mut items = Vec::new();
    for r in records {
        let support: BTreeSet<&str> = r.supporting_facts.iter().map(|(t, _)| t.as_str()).collect();
        let mut gold = BTreeSet::new();
        for (title, sentences) in &r.context {
            let id = docs.intern(title, sentences.concat().trim());
            if support.contains(title.as_str()) {
                gold.insert(id);
            }
        }
        items.push(QAItem {
            id: r.id,
            question: r.question,
            answer: r.answer,
            aliases: Vec::new(),
            gold_support_docs: gold,
        });
    }
    Ok(Converted { docs: docs.docs, items })
}
