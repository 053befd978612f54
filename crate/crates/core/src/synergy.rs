//! Cross-channel scoring: graph votes re-rank text chunks, text evidence
//! confirms graph paths, and orphan entities seen in the text are bridged
//! back from the search memory.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::kb::{ChunkId, EntityId, KnowledgeBase};
use crate::search::{Path, VisitedMemory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynergyConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub k_r: usize,
    pub k_o: usize,
}

impl Default for SynergyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epsilon: 0.4,
            gamma: 0.4,
            lambda_e: 0.01,
            lambda_r: 0.01,
            k_r: 4,
            k_o: 3,
        }
    }
}

impl SynergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("gamma", self.gamma),
            ("lambda_e", self.lambda_e),
            ("lambda_r", self.lambda_r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: ChunkId,
    pub sim: f64,
    pub rec: usize,
    pub score_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: Path,
    pub score_base: f64,
    pub confirmations: usize,
    pub score_conf: f64,
}

/// Number of distinct visited entities that list each chunk as a source.
pub fn tally_votes(kb: &KnowledgeBase, memory: &VisitedMemory) -> Result<BTreeMap<ChunkId, usize>> {
    let mut votes = BTreeMap::new();
    for e in memory.entities() {
        let entity = kb.entity(e).ok_or_else(|| Error::UnknownEntity(e.to_string()))?;
        for c in &entity.source_chunk_ids {
            *votes.entry(c.clone()).or_insert(0) += 1;
        }
    }
    Ok(votes)
}

/// The `k_r` most-voted chunks, ties by chunk id.
pub fn top_voted(votes: &BTreeMap<ChunkId, usize>, k_r: usize) -> Vec<(ChunkId, usize)> {
    let mut v: Vec<(ChunkId, usize)> = votes.iter().map(|(c, n)| (c.clone(), *n)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k_r);
    v
}

pub fn recommend_chunks(
    kb: &KnowledgeBase,
    memory: &VisitedMemory,
    k_r: usize,
) -> Result<Vec<(ChunkId, usize)>> {
    if k_r == 0 {
        return Ok(Vec::new());
    }
    Ok(top_voted(&tally_votes(kb, memory)?, k_r))
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

fn by_final_then_id(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score_final
        .total_cmp(&a.score_final)
        .then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

/// Fuses similarity and vote count for a candidate pool of
/// `(chunk, sim, rec)` triples. Each signal is min-max normalized over the
/// pool; a constant signal normalizes to 1.0.
pub fn fuse_scores(pool: &[(ChunkId, f64, usize)], alpha: f64) -> Vec<ScoredChunk> {
    let sims: Vec<f64> = pool.iter().map(|p| p.1).collect();
    let recs: Vec<f64> = pool.iter().map(|p| p.2 as f64).collect();
    let (ns, nr) = (min_max(&sims), min_max(&recs));
    let mut out: Vec<ScoredChunk> = pool
        .iter()
        .enumerate()
        .map(|(i, (c, sim, rec))| ScoredChunk {
            chunk_id: c.clone(),
            sim: *sim,
            rec: *rec,
            score_final: alpha * ns[i] + (1.0 - alpha) * nr[i],
        })
        .collect();
    out.sort_by(by_final_then_id);
    out
}

/// Re-ranks the union of the initial chunks and the recommended chunks.
/// Every pool member's vote count comes from `votes`; recommended chunks
/// that were not retrieved initially get their cosine computed here.
pub fn rerank_chunks(
    kb: &KnowledgeBase,
    q_vec: &[f64],
    c_initial: &[(ChunkId, f64)],
    recommended: &[(ChunkId, usize)],
    votes: &BTreeMap<ChunkId, usize>,
    alpha: f64,
) -> Result<Vec<ScoredChunk>> {
    let mut sims: BTreeMap<ChunkId, f64> = c_initial.iter().cloned().collect();
    for (c, _) in recommended {
        if !sims.contains_key(c) {
            let v = kb
                .chunk_embedding(c)
                .ok_or_else(|| Error::MissingEmbedding(c.to_string()))?;
            sims.insert(c.clone(), cosine(v, q_vec)?);
        }
    }
    let pool: Vec<(ChunkId, f64, usize)> = sims
        .into_iter()
        .map(|(c, s)| {
            let r = votes.get(&c).copied().unwrap_or(0);
            (c, s, r)
        })
        .collect();
    Ok(fuse_scores(&pool, alpha))
}

/// Query similarity of the path's entities plus seed density and log-damped
/// entity degree and relation weight terms.
pub fn score_base(
    kb: &KnowledgeBase,
    path: &Path,
    q_vec: &[f64],
    seeds: &BTreeSet<EntityId>,
    config: &SynergyConfig,
) -> Result<f64> {
    if path.entity_ids.is_empty() {
        return Err(Error::Invalid("cannot score an empty path".into()));
    }
    let n = path.entity_ids.len() as f64;
    let mut sim_sum = 0.0;
    let mut degree_term = 0.0;
    let mut seed_hits = 0usize;
    for e in &path.entity_ids {
        let v = kb
            .entity_embedding(e)
            .ok_or_else(|| Error::MissingEmbedding(e.to_string()))?;
        sim_sum += cosine(v, q_vec)?;
        let entity = kb.entity(e).ok_or_else(|| Error::UnknownEntity(e.to_string()))?;
        degree_term += (1.0 + entity.degree as f64).ln();
        if seeds.contains(e) {
            seed_hits += 1;
        }
    }
    let mut weight_term = 0.0;
    for r in &path.relation_ids {
        let rel = kb
            .relation(r)
            .ok_or_else(|| Error::Invalid(format!("unknown relation {r}")))?;
        weight_term += (1.0 + rel.weight as f64).ln();
    }
    Ok(sim_sum / n
        + config.gamma * seed_hits as f64 / n
        + config.lambda_e * degree_term
        + config.lambda_r * weight_term)
}

/// Union of the entities annotated on the given chunks. Reads chunk
/// annotations only.
pub fn chunk_entities(kb: &KnowledgeBase, chunks: &[ChunkId]) -> Result<BTreeSet<EntityId>> {
    let mut out = BTreeSet::new();
    for c in chunks {
        let chunk = kb.chunk(c).ok_or_else(|| Error::UnknownChunk(c.to_string()))?;
        out.extend(chunk.entity_ids.iter().cloned());
    }
    Ok(out)
}

fn by_conf(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score_conf
        .total_cmp(&a.score_conf)
        .then_with(|| a.path.entity_ids[0].cmp(&b.path.entity_ids[0]))
        .then_with(|| a.path.len().cmp(&b.path.len()))
        .then_with(|| a.path.entity_ids.cmp(&b.path.entity_ids))
}

/// Scores each path and adds `epsilon` for every path entity that also
/// appears in the initial text chunks.
pub fn confirm_paths(
    kb: &KnowledgeBase,
    paths: &[Path],
    text_entities: &BTreeSet<EntityId>,
    q_vec: &[f64],
    seeds: &BTreeSet<EntityId>,
    config: &SynergyConfig,
) -> Result<Vec<ScoredPath>> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let base = score_base(kb, p, q_vec, seeds, config)?;
        let distinct: BTreeSet<&EntityId> = p.entity_ids.iter().collect();
        let confirmations = distinct.iter().filter(|e| text_entities.contains(**e)).count();
        out.push(ScoredPath {
            path: p.clone(),
            score_base: base,
            confirmations,
            score_conf: base + config.epsilon * confirmations as f64,
        });
    }
    out.sort_by(by_conf);
    Ok(out)
}

/// Entities mentioned in the text chunks but absent from every graph path.
pub fn orphan_entities(text_entities: &BTreeSet<EntityId>, p_initial: &[Path]) -> BTreeSet<EntityId> {
    let on_paths: BTreeSet<&EntityId> = p_initial.iter().flat_map(|p| p.entity_ids.iter()).collect();
    text_entities
        .iter()
        .filter(|e| !on_paths.contains(e))
        .cloned()
        .collect()
}

/// Replays the stored memory path of the best `k_o` orphans (by memory
/// score, then id). Uses only its arguments; the graph is never consulted.
pub fn bridge_orphans(
    text_entities: &BTreeSet<EntityId>,
    p_initial: &[Path],
    memory: &VisitedMemory,
    k_o: usize,
) -> Vec<Path> {
    let orphans = orphan_entities(text_entities, p_initial);
    let mut found: Vec<(&EntityId, f64, &Path)> = orphans
        .iter()
        .filter_map(|e| memory.get(e).map(|m| (e, m.score, &m.path)))
        .collect();
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    found.into_iter().take(k_o).map(|(_, _, p)| p.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> ChunkId {
        ChunkId::from_raw(s)
    }

    #[test]
    fn fusion_arithmetic() {
        // sims normalize to (1, 0.5, 0), recs to (0, 1, 0.5)
        let pool = vec![(c("c1"), 0.9, 0), (c("c2"), 0.6, 4), (c("c3"), 0.3, 2)];
        let out = fuse_scores(&pool, 0.5);
        let ids: Vec<&str> = out.iter().map(|s| s.chunk_id.as_str()).collect();
        assert_eq!(ids, ["c2", "c1", "c3"]);
        let scores: Vec<f64> = out.iter().map(|s| s.score_final).collect();
        for (got, want) in scores.iter().zip([0.75, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_signal_normalizes_to_one() {
        let pool = vec![(c("a"), 0.4, 3), (c("b"), 0.4, 3)];
        let out = fuse_scores(&pool, 0.3);
        assert!(out.iter().all(|s| (s.score_final - 1.0).abs() < 1e-12));
        assert_eq!(out[0].chunk_id.as_str(), "a");
        assert!(fuse_scores(&[], 0.5).is_empty());
    }

    #[test]
    fn alpha_validation() {
        assert!(SynergyConfig { alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(SynergyConfig { epsilon: -0.1, ..Default::default() }.validate().is_err());
        assert!(SynergyConfig::default().validate().is_ok());
    }

    #[test]
    fn top_voted_ties_by_id() {
        let votes = BTreeMap::from([(c("b"), 2), (c("a"), 2), (c("z"), 5), (c("q"), 1)]);
        let top = top_voted(&votes, 3);
        assert_eq!(top, vec![(c("z"), 5), (c("a"), 2), (c("b"), 2)]);
        assert!(top_voted(&votes, 0).is_empty());
    }
}
