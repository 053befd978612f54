//! Semantic beam search over the entity graph with a visited memory of every
//! explored node, including the ones pruned from the beam.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{by_score_then_id, cosine, topk_entities, Embedder};
use crate::error::{Error, Result};
use crate::kb::{normalize_entity_name, EntityId, KnowledgeBase, RelationId, DEFAULT_MAX_NEIGHBORS};
use crate::tokens::TokenLedger;

/// A simple path through the graph. `score` is the similarity of the last
/// node to the query (1.0 for a bare seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub entity_ids: Vec<EntityId>,
    pub relation_ids: Vec<RelationId>,
    pub score: f64,
}

impl Path {
    pub fn seed(e: EntityId) -> Self {
        Self { entity_ids: vec![e], relation_ids: Vec::new(), score: 1.0 }
    }

    pub fn last(&self) -> &EntityId {
        self.entity_ids.last().expect("paths are non-empty")
    }

    pub fn contains(&self, e: &EntityId) -> bool {
        self.entity_ids.contains(e)
    }

    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    fn extend(&self, n: &EntityId, r: &RelationId, score: f64) -> Self {
        let mut p = self.clone();
        p.entity_ids.push(n.clone());
        p.relation_ids.push(r.clone());
        p.score = score;
        p
    }
}

/// Beam ordering: score desc, last entity asc, shorter first, then the full
/// entity sequence so the order is total.
pub fn beam_order(a: &Path, b: &Path) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.last().cmp(b.last()))
        .then_with(|| a.len().cmp(&b.len()))
        .then_with(|| a.entity_ids.cmp(&b.entity_ids))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub path: Path,
    pub score: f64,
}

/// Best path and score seen for every entity the search touched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisitedMemory {
    entries: BTreeMap<EntityId, MemoryEntry>,
}

impl VisitedMemory {
    pub fn get(&self, e: &EntityId) -> Option<&MemoryEntry> {
        self.entries.get(e)
    }

    pub fn contains(&self, e: &EntityId) -> bool {
        self.entries.contains_key(e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, &MemoryEntry)> {
        self.entries.iter()
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        self.entries.keys()
    }

    /// Stores `path` for `e` when `e` is new or `score` strictly beats the
    /// stored score.
    fn offer(&mut self, e: &EntityId, path: &Path, score: f64) {
        match self.entries.get(e) {
            Some(m) if score <= m.score => {}
            _ => {
                self.entries
                    .insert(e.clone(), MemoryEntry { path: path.clone(), score });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_depth: usize,
    pub max_neighbors: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_width: 20, max_depth: 3, max_neighbors: DEFAULT_MAX_NEIGHBORS }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_depth == 0 || self.max_neighbors == 0 {
            return Err(Error::Invalid(format!(
                "beam width, depth and neighbor cap must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One candidate produced while expanding the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub depth: usize,
    pub path: Path,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeamOutput {
    pub paths: Vec<Path>,
    pub memory: VisitedMemory,
    /// Number of candidate expansions scored.
    pub nodes_explored: usize,
    /// Depth reached before the frontier emptied (or `max_depth`).
    pub depth_reached: usize,
}

/// Runs the beam search from `seeds`.
pub fn beam_search(
    kb: &KnowledgeBase,
    q_vec: &[f64],
    seeds: &BTreeSet<EntityId>,
    config: &BeamConfig,
) -> Result<BeamOutput> {
    run(kb, q_vec, seeds, config, None)
}

/// As [`beam_search`], also returning every candidate expansion in the
/// order it was scored.
pub fn beam_search_logged(
    kb: &KnowledgeBase,
    q_vec: &[f64],
    seeds: &BTreeSet<EntityId>,
    config: &BeamConfig,
) -> Result<(BeamOutput, Vec<Expansion>)> {
    let mut log = Vec::new();
    let out = run(kb, q_vec, seeds, config, Some(&mut log))?;
    Ok((out, log))
}

fn run(
    kb: &KnowledgeBase,
    q_vec: &[f64],
    seeds: &BTreeSet<EntityId>,
    config: &BeamConfig,
    mut log: Option<&mut Vec<Expansion>>,
) -> Result<BeamOutput> {
    config.validate()?;
    let mut out = BeamOutput::default();
    let mut beam: Vec<Path> = Vec::with_capacity(seeds.len());
    for e in seeds {
        if kb.entity(e).is_none() {
            return Err(Error::UnknownEntity(e.to_string()));
        }
        let p = Path::seed(e.clone());
        out.memory.offer(e, &p, 1.0);
        beam.push(p);
    }
    // similarity cache; each entity's cosine is computed once per search
    let mut sims: BTreeMap<EntityId, f64> = BTreeMap::new();
    for depth in 1..=config.max_depth {
        if beam.is_empty() {
            break;
        }
        let mut candidates = Vec::new();
        for p in &beam {
            for (n, rid) in kb.neighbors(p.last(), config.max_neighbors)? {
                if p.contains(n) {
                    continue;
                }
                let sim = match sims.get(n) {
                    Some(s) => *s,
                    None => {
                        let v = kb
                            .entity_embedding(n)
                            .ok_or_else(|| Error::MissingEmbedding(n.to_string()))?;
                        let s = cosine(v, q_vec)?;
                        sims.insert(n.clone(), s);
                        s
                    }
                };
                let p_new = p.extend(n, rid, sim);
                out.memory.offer(n, &p_new, sim);
                out.nodes_explored += 1;
                if let Some(log) = log.as_deref_mut() {
                    log.push(Expansion { depth, path: p_new.clone() });
                }
                candidates.push(p_new);
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(beam_order);
        candidates.truncate(config.beam_width);
        beam = candidates;
        out.depth_reached = depth;
    }
    out.paths = beam;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    /// Graph entities kept per extracted query entity.
    pub per_entity: usize,
    pub min_similarity: f64,
    /// Entities taken by query-vector similarity when nothing else matched.
    pub fallback: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { per_entity: 2, min_similarity: 0.5, fallback: 3 }
    }
}

/// Maps extracted query entity strings onto graph entities.
///
/// Each query entity contributes its `per_entity` best graph entities with
/// similarity at least `min_similarity`; an entity whose normalized name
/// equals the query entity counts as similarity 1.0. If nothing qualifies,
/// the `fallback` entities nearest to the query vector are used.
pub fn select_seed_entities(
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    ledger: &TokenLedger,
    query_entities: &[String],
    q_vec: &[f64],
    config: &SeedConfig,
) -> Result<BTreeSet<EntityId>> {
    let mut seeds = BTreeSet::new();
    if kb.entity_count() == 0 {
        return Ok(seeds);
    }
    if config.per_entity > 0 {
        for name in query_entities {
            if name.trim().is_empty() {
                continue;
            }
            let mut cands: Vec<(EntityId, f64)> = Vec::new();
            // an exact name match is the best possible candidate whatever
            // text the entity vectors were built from
            if let Ok(id) = normalize_entity_name(name) {
                if kb.entity(&id).is_some() {
                    cands.push((id, 1.0));
                }
            }
            let v = embedder.embed(name, ledger)?;
            for (e, s) in topk_entities(kb, &v, config.per_entity)? {
                if !cands.iter().any(|(c, _)| c == &e) {
                    cands.push((e, s));
                }
            }
            cands.sort_by(by_score_then_id);
            cands.truncate(config.per_entity);
            seeds.extend(
                cands
                    .into_iter()
                    .filter(|(_, s)| *s >= config.min_similarity)
                    .map(|(e, _)| e),
            );
        }
    }
    if seeds.is_empty() && config.fallback > 0 {
        seeds.extend(topk_entities(kb, q_vec, config.fallback)?.into_iter().map(|(e, _)| e));
    }
    Ok(seeds)
}
