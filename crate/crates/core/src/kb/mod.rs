//! The knowledge base: chunk store, entity/relation graph, and the
//! bidirectional chunk <-> entity provenance mapping.
//!
//! A [`KbBuilder`] is the single writer during construction. [`KbBuilder::freeze`]
//! validates every invariant and yields an immutable [`KnowledgeBase`] that is
//! `Sync` and can be shared across query threads.

mod ids;
pub mod store;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ids::{normalize_entity_name, ChunkId, DocumentId, EntityId, RelationId};

/// Default per-node neighbor cap for graph expansion.
pub const DEFAULT_MAX_NEIGHBORS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub doc_id: DocumentId,
    pub ordinal: usize,
    pub text: String,
    pub entity_ids: BTreeSet<EntityId>,
    pub char_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub category: String,
    pub description: String,
    pub source_chunk_ids: BTreeSet<ChunkId>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub keywords: Vec<String>,
    pub description: String,
    pub weight: usize,
    pub source_chunk_ids: BTreeSet<ChunkId>,
}

impl Relation {
    pub fn source(&self) -> &EntityId {
        &self.id.source
    }

    pub fn target(&self) -> &EntityId {
        &self.id.target
    }
}

/// Dense vectors for chunks and entities, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub chunks: BTreeMap<ChunkId, Vec<f64>>,
    pub entities: BTreeMap<EntityId, Vec<f64>>,
}

/// Everything that is persisted. Two knowledge bases are equal when their
/// `KbData` are equal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KbData {
    pub chunks: BTreeMap<ChunkId, Chunk>,
    pub entities: BTreeMap<EntityId, Entity>,
    pub relations: BTreeMap<RelationId, Relation>,
    pub doc_index: BTreeMap<DocumentId, Vec<ChunkId>>,
    pub embeddings: EmbeddingStore,
    /// Free-form build settings recorded alongside the data.
    pub settings: serde_json::Value,
}

/// Outcome of [`KbBuilder::upsert_relation`].
#[derive(Debug, Clone, PartialEq)]
pub enum RelationUpsert {
    Stored(RelationId),
    /// Both endpoints normalized to the same entity.
    SkippedSelfLoop(EntityId),
}

#[derive(Debug, Default)]
pub struct KbBuilder {
    data: KbData,
    diagnostics: Vec<String>,
}

impl KbBuilder {
    pub fn new(dim: usize) -> Self {
        let mut b = Self::default();
        b.data.embeddings.dim = dim;
        b.data.settings = serde_json::Value::Null;
        b
    }

    pub fn set_settings(&mut self, settings: serde_json::Value) {
        self.data.settings = settings;
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn chunk_count(&self) -> usize {
        self.data.chunks.len()
    }

    pub fn entity_count(&self) -> usize {
        self.data.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.data.relations.len()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.data.chunks.values()
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.data.entities.values()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.data.entities.get(id)
    }

    pub fn relation(&self, id: &RelationId) -> Option<&Relation> {
        self.data.relations.get(id)
    }

    /// Stores a chunk under `"doc_id#ordinal"`. Re-inserting identical text is
    /// a no-op; different text replaces the old text and keeps annotations.
    pub fn upsert_chunk(&mut self, doc_id: &str, ordinal: usize, text: &str) -> Result<ChunkId> {
        if text.is_empty() {
            return Err(Error::Invalid(format!("empty text for chunk {doc_id}#{ordinal}")));
        }
        let doc = DocumentId::new(doc_id)?;
        let id = ChunkId::from_parts(&doc, ordinal);
        match self.data.chunks.get_mut(&id) {
            Some(existing) => {
                if existing.text != text {
                    existing.text = text.to_string();
                    existing.char_count = text.chars().count();
                }
            }
            None => {
                self.data.chunks.insert(
                    id.clone(),
                    Chunk {
                        id: id.clone(),
                        doc_id: doc.clone(),
                        ordinal,
                        text: text.to_string(),
                        entity_ids: BTreeSet::new(),
                        char_count: text.chars().count(),
                    },
                );
                let list = self.data.doc_index.entry(doc).or_default();
                list.push(id.clone());
                let chunks = &self.data.chunks;
                list.sort_by_key(|c| chunks[c].ordinal);
            }
        }
        Ok(id)
    }

    /// Creates or merges an entity and links it to `source_chunk`.
    pub fn upsert_entity(
        &mut self,
        name: &str,
        category: &str,
        description: &str,
        source_chunk: &ChunkId,
    ) -> Result<EntityId> {
        let id = normalize_entity_name(name)?;
        if !self.data.chunks.contains_key(source_chunk) {
            return Err(Error::UnknownChunk(source_chunk.to_string()));
        }
        let category = category.trim().to_lowercase();
        match self.data.entities.get_mut(&id) {
            Some(e) => {
                e.description = merge_sentences(&e.description, description);
                if e.category == "other" && !category.is_empty() && category != "other" {
                    e.category = category;
                }
            }
            None => {
                self.data.entities.insert(
                    id.clone(),
                    Entity {
                        id: id.clone(),
                        category: if category.is_empty() { "other".into() } else { category },
                        description: merge_sentences("", description),
                        source_chunk_ids: BTreeSet::new(),
                        degree: 0,
                    },
                );
            }
        }
        self.link(&id, source_chunk);
        Ok(id)
    }

    /// Stores an undirected relation. Missing endpoints become placeholder
    /// entities; both endpoints gain `source_chunk` as provenance.
    pub fn upsert_relation(
        &mut self,
        source_name: &str,
        target_name: &str,
        keywords: &[String],
        description: &str,
        source_chunk: &ChunkId,
    ) -> Result<RelationUpsert> {
        let a = normalize_entity_name(source_name)?;
        let b = normalize_entity_name(target_name)?;
        if !self.data.chunks.contains_key(source_chunk) {
            return Err(Error::UnknownChunk(source_chunk.to_string()));
        }
        let Some(rid) = RelationId::new(a.clone(), b.clone()) else {
            self.diagnostics
                .push(format!("{source_chunk}: skipped self-loop relation on `{a}`"));
            return Ok(RelationUpsert::SkippedSelfLoop(a));
        };
        for endpoint in [&a, &b] {
            if !self.data.entities.contains_key(endpoint) {
                self.data.entities.insert(
                    endpoint.clone(),
                    Entity {
                        id: endpoint.clone(),
                        category: "other".into(),
                        description: String::new(),
                        source_chunk_ids: BTreeSet::new(),
                        degree: 0,
                    },
                );
            }
            self.link(endpoint, source_chunk);
        }
        let keywords: Vec<String> = keywords
            .iter()
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .collect();
        match self.data.relations.get_mut(&rid) {
            Some(rel) => {
                for k in keywords {
                    if !rel.keywords.contains(&k) {
                        rel.keywords.push(k);
                    }
                }
                rel.description = merge_sentences(&rel.description, description);
                rel.source_chunk_ids.insert(source_chunk.clone());
                rel.weight = rel.source_chunk_ids.len();
            }
            None => {
                let mut kws: Vec<String> = Vec::new();
                for k in keywords {
                    if !kws.contains(&k) {
                        kws.push(k);
                    }
                }
                self.data.relations.insert(
                    rid.clone(),
                    Relation {
                        id: rid.clone(),
                        keywords: kws,
                        description: merge_sentences("", description),
                        weight: 1,
                        source_chunk_ids: BTreeSet::from([source_chunk.clone()]),
                    },
                );
                for endpoint in [&a, &b] {
                    if let Some(e) = self.data.entities.get_mut(endpoint) {
                        e.degree += 1;
                    }
                }
            }
        }
        Ok(RelationUpsert::Stored(rid))
    }

    pub fn set_chunk_embedding(&mut self, id: &ChunkId, v: Vec<f64>) -> Result<()> {
        if !self.data.chunks.contains_key(id) {
            return Err(Error::UnknownChunk(id.to_string()));
        }
        self.check_dim(&v)?;
        self.data.embeddings.chunks.insert(id.clone(), v);
        Ok(())
    }

    pub fn set_entity_embedding(&mut self, id: &EntityId, v: Vec<f64>) -> Result<()> {
        if !self.data.entities.contains_key(id) {
            return Err(Error::UnknownEntity(id.to_string()));
        }
        self.check_dim(&v)?;
        self.data.embeddings.entities.insert(id.clone(), v);
        Ok(())
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.data.embeddings.dim {
            return Err(Error::LengthMismatch(self.data.embeddings.dim, v.len()));
        }
        Ok(())
    }

    fn link(&mut self, entity: &EntityId, chunk: &ChunkId) {
        if let Some(e) = self.data.entities.get_mut(entity) {
            e.source_chunk_ids.insert(chunk.clone());
        }
        if let Some(c) = self.data.chunks.get_mut(chunk) {
            c.entity_ids.insert(entity.clone());
        }
    }

    /// Validates invariants and produces the read-only knowledge base.
    pub fn freeze(self) -> Result<KnowledgeBase> {
        KnowledgeBase::from_data(self.data)
    }
}

/// Appends the `"; "`-separated sentences of `incoming` that `existing`
/// does not already contain.
fn merge_sentences(existing: &str, incoming: &str) -> String {
    let mut parts: Vec<&str> = existing
        .split("; ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    for s in incoming.split("; ").map(str::trim).filter(|s| !s.is_empty()) {
        if !parts.contains(&s) {
            parts.push(s);
        }
    }
    parts.join("; ")
}

thread_local! {
    static THREAD_READS: Cell<u64> = const { Cell::new(0) };
}

/// Graph-store reads made by the calling thread across all knowledge bases.
/// Unlike [`KnowledgeBase::graph_reads`] this is not disturbed by queries
/// running on other threads.
pub fn thread_graph_reads() -> u64 {
    THREAD_READS.with(Cell::get)
}

/// Frozen knowledge base. Reads of the entity graph are counted so callers
/// can verify that a stage touches no graph storage.
#[derive(Debug)]
pub struct KnowledgeBase {
    data: KbData,
    adjacency: HashMap<EntityId, Vec<(EntityId, RelationId)>>,
    graph_reads: AtomicU64,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl KnowledgeBase {
    pub fn from_data(data: KbData) -> Result<Self> {
        validate(&data)?;
        let mut adjacency: HashMap<EntityId, Vec<(EntityId, RelationId)>> = data
            .entities
            .keys()
            .map(|e| (e.clone(), Vec::new()))
            .collect();
        for rid in data.relations.keys() {
            adjacency
                .get_mut(&rid.source)
                .expect("validated")
                .push((rid.target.clone(), rid.clone()));
            adjacency
                .get_mut(&rid.target)
                .expect("validated")
                .push((rid.source.clone(), rid.clone()));
        }
        for list in adjacency.values_mut() {
            list.sort_by(|(na, ra), (nb, rb)| {
                let wa = data.relations[ra].weight;
                let wb = data.relations[rb].weight;
                wb.cmp(&wa).then_with(|| na.cmp(nb))
            });
        }
        Ok(Self {
            data,
            adjacency,
            graph_reads: AtomicU64::new(0),
        })
    }

    pub fn empty(dim: usize) -> Self {
        KbBuilder::new(dim).freeze().expect("empty kb is valid")
    }

    pub fn data(&self) -> &KbData {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.embeddings.dim
    }

    pub fn settings(&self) -> &serde_json::Value {
        &self.data.settings
    }

    /// Number of graph-store reads served so far.
    pub fn graph_reads(&self) -> u64 {
        self.graph_reads.load(Ordering::Relaxed)
    }

    fn count_read(&self) {
        self.graph_reads.fetch_add(1, Ordering::Relaxed);
        THREAD_READS.with(|c| c.set(c.get() + 1));
    }

    pub fn chunk(&self, id: &ChunkId) -> Option<&Chunk> {
        self.data.chunks.get(id)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.data.chunks.values()
    }

    pub fn chunk_count(&self) -> usize {
        self.data.chunks.len()
    }

    pub fn chunk_embedding(&self, id: &ChunkId) -> Option<&[f64]> {
        self.data.embeddings.chunks.get(id).map(Vec::as_slice)
    }

    pub fn chunk_embeddings(&self) -> &BTreeMap<ChunkId, Vec<f64>> {
        &self.data.embeddings.chunks
    }

    pub fn documents(&self) -> impl Iterator<Item = (&DocumentId, &Vec<ChunkId>)> {
        self.data.doc_index.iter()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.count_read();
        self.data.entities.get(id)
    }

    pub fn entity_count(&self) -> usize {
        self.data.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.data.relations.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.count_read();
        self.data.entities.values()
    }

    pub fn relation(&self, id: &RelationId) -> Option<&Relation> {
        self.count_read();
        self.data.relations.get(id)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.count_read();
        self.data.relations.values()
    }

    pub fn entity_embedding(&self, id: &EntityId) -> Option<&[f64]> {
        self.count_read();
        self.data.embeddings.entities.get(id).map(Vec::as_slice)
    }

    pub fn entity_embeddings(&self) -> &BTreeMap<EntityId, Vec<f64>> {
        self.count_read();
        &self.data.embeddings.entities
    }

    /// Incident neighbors by relation weight descending, then entity id
    /// ascending, truncated to `n_max`.
    pub fn neighbors(&self, id: &EntityId, n_max: usize) -> Result<&[(EntityId, RelationId)]> {
        self.count_read();
        let list = self
            .adjacency
            .get(id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
        Ok(&list[..list.len().min(n_max)])
    }

    /// Documents of every chunk the entity was extracted from.
    pub fn source_documents(&self, id: &EntityId) -> Result<BTreeSet<DocumentId>> {
        let entity = self
            .entity(id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
        Ok(entity
            .source_chunk_ids
            .iter()
            .filter_map(|c| self.data.chunks.get(c))
            .map(|c| c.doc_id.clone())
            .collect())
    }

    pub fn check_invariants(&self) -> Result<()> {
        validate(&self.data)
    }
}

fn invalid(msg: String) -> Error {
    Error::Invalid(msg)
}

/// Full scan of every structural invariant.
fn validate(data: &KbData) -> Result<()> {
    for (id, chunk) in &data.chunks {
        if &chunk.id != id || chunk.text.is_empty() {
            return Err(invalid(format!("chunk {id} is malformed")));
        }
        if ChunkId::from_parts(&chunk.doc_id, chunk.ordinal) != *id {
            return Err(invalid(format!("chunk {id} does not match its document/ordinal")));
        }
        if !data.doc_index.get(&chunk.doc_id).is_some_and(|l| l.contains(id)) {
            return Err(invalid(format!("chunk {id} missing from document index")));
        }
        for e in &chunk.entity_ids {
            let ok = data
                .entities
                .get(e)
                .is_some_and(|ent| ent.source_chunk_ids.contains(id));
            if !ok {
                return Err(invalid(format!("chunk {id} -> entity {e} is not mirrored")));
            }
        }
    }
    for (doc, list) in &data.doc_index {
        for c in list {
            if !data.chunks.get(c).is_some_and(|ch| &ch.doc_id == doc) {
                return Err(invalid(format!("document index {doc} lists unknown chunk {c}")));
            }
        }
    }
    let mut degree: BTreeMap<&EntityId, usize> = BTreeMap::new();
    for (rid, rel) in &data.relations {
        if &rel.id != rid || rid.source >= rid.target {
            return Err(invalid(format!("relation {rid} is not canonical")));
        }
        if rel.weight == 0 || rel.weight != rel.source_chunk_ids.len() {
            return Err(invalid(format!("relation {rid} weight disagrees with provenance")));
        }
        for c in &rel.source_chunk_ids {
            if !data.chunks.contains_key(c) {
                return Err(invalid(format!("relation {rid} cites unknown chunk {c}")));
            }
        }
        for end in [&rid.source, &rid.target] {
            if !data.entities.contains_key(end) {
                return Err(invalid(format!("relation {rid} has dangling endpoint {end}")));
            }
            *degree.entry(end).or_default() += 1;
        }
    }
    for (id, ent) in &data.entities {
        if &ent.id != id {
            return Err(invalid(format!("entity {id} is malformed")));
        }
        if normalize_entity_name(id.as_str())?.as_str() != id.as_str() {
            return Err(invalid(format!("entity id {id} is not normalized")));
        }
        if ent.degree != degree.get(id).copied().unwrap_or(0) {
            return Err(invalid(format!("entity {id} degree is stale")));
        }
        for c in &ent.source_chunk_ids {
            let ok = data.chunks.get(c).is_some_and(|ch| ch.entity_ids.contains(id));
            if !ok {
                return Err(invalid(format!("entity {id} -> chunk {c} is not mirrored")));
            }
        }
    }
    let dim = data.embeddings.dim;
    for (c, v) in &data.embeddings.chunks {
        if !data.chunks.contains_key(c) || v.len() != dim {
            return Err(invalid(format!("bad chunk embedding for {c}")));
        }
    }
    for (e, v) in &data.embeddings.entities {
        if !data.entities.contains_key(e) || v.len() != dim {
            return Err(invalid(format!("bad entity embedding for {e}")));
        }
    }
    Ok(())
}
