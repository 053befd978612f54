//! On-disk layout of a knowledge base directory.
//!
//! ```text
//! kb/
//!   meta.json          format version, embedding dimension, record counts, build settings
//!   chunks.jsonl       one chunk per line, sorted by id
//!   entities.jsonl     one entity per line, sorted by id
//!   relations.jsonl    one relation per line, sorted by (source, target)
//!   embeddings.jsonl   chunk vectors, then entity vectors, each sorted by id
//! ```
//!
//! Output is byte-deterministic for a given knowledge base.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Chunk, ChunkId, EmbeddingStore, Entity, EntityId, KbData, KnowledgeBase, Relation};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const RELATIONS_FILE: &str = "relations.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbMeta {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub counts: RecordCounts,
    pub settings: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub chunks: usize,
    pub entities: usize,
    pub relations: usize,
    pub embeddings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EmbeddingRecord {
    Chunk { id: ChunkId, vector: Vec<f64> },
    Entity { id: EntityId, vector: Vec<f64> },
}

pub fn save(kb: &KnowledgeBase, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = kb.data();
    let emb = &data.embeddings;
    let meta = KbMeta {
        format_version: FORMAT_VERSION,
        embedding_dim: emb.dim,
        counts: RecordCounts {
            chunks: data.chunks.len(),
            entities: data.entities.len(),
            relations: data.relations.len(),
            embeddings: emb.chunks.len() + emb.entities.len(),
        },
        settings: data.settings.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    write_lines(&dir.join(CHUNKS_FILE), data.chunks.values())?;
    write_lines(&dir.join(ENTITIES_FILE), data.entities.values())?;
    write_lines(&dir.join(RELATIONS_FILE), data.relations.values())?;
    let records = emb
        .chunks
        .iter()
        .map(|(id, v)| EmbeddingRecord::Chunk { id: id.clone(), vector: v.clone() })
        .chain(
            emb.entities
                .iter()
                .map(|(id, v)| EmbeddingRecord::Entity { id: id.clone(), vector: v.clone() }),
        );
    write_lines(&dir.join(EMBEDDINGS_FILE), records)
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: DeserializeOwned>(path: &Path, expected: usize) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(expected);
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
    if out.len() != expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: out.len() + 1,
            reason: format!("expected {expected} records, found {}", out.len()),
        });
    }
    Ok(out)
}

pub fn read_meta(dir: impl AsRef<Path>) -> Result<KbMeta> {
    let path = dir.as_ref().join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: KbMeta = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Malformed {
            path,
            line: 1,
            reason: format!("unsupported format version {}", meta.format_version),
        });
    }
    Ok(meta)
}

pub fn load(dir: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let chunks: Vec<Chunk> = read_lines(&dir.join(CHUNKS_FILE), meta.counts.chunks)?;
    let entities: Vec<Entity> = read_lines(&dir.join(ENTITIES_FILE), meta.counts.entities)?;
    let relations: Vec<Relation> = read_lines(&dir.join(RELATIONS_FILE), meta.counts.relations)?;
    let embeddings: Vec<EmbeddingRecord> =
        read_lines(&dir.join(EMBEDDINGS_FILE), meta.counts.embeddings)?;

    let mut data = KbData {
        embeddings: EmbeddingStore {
            dim: meta.embedding_dim,
            ..Default::default()
        },
        settings: meta.settings,
        ..Default::default()
    };
    for c in chunks {
        data.doc_index.entry(c.doc_id.clone()).or_default().push(c.id.clone());
        data.chunks.insert(c.id.clone(), c);
    }
    for list in data.doc_index.values_mut() {
        list.sort_by_key(|id| data.chunks[id].ordinal);
    }
    data.entities = entities.into_iter().map(|e| (e.id.clone(), e)).collect();
    data.relations = relations.into_iter().map(|r| (r.id.clone(), r)).collect();
    for rec in embeddings {
        match rec {
            EmbeddingRecord::Chunk { id, vector } => {
                data.embeddings.chunks.insert(id, vector);
            }
            EmbeddingRecord::Entity { id, vector } => {
                data.embeddings.entities.insert(id, vector);
            }
        }
    }
    KnowledgeBase::from_data(data)
}

/// Reads every file of a KB directory into memory keyed by file name.
/// Used to compare two builds byte-for-byte.
pub fn snapshot_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.insert(PathBuf::from(entry.file_name()), bytes);
        }
    }
    Ok(out)
}
