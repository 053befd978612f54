//! One query end to end: both retrieval channels, cross-channel synergy,
//! context rendering and answer generation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::{topk_chunks, Embedder};
use crate::error::{Error, ProviderError, Result};
use crate::extraction::{extract_query_entities, QueryEntityCache};
use crate::kb::{thread_graph_reads, ChunkId, EntityId, KnowledgeBase};
use crate::llm::{LlmClient, LlmRequest};
use crate::prompts;
use crate::search::{beam_search, select_seed_entities, BeamConfig, Path, SeedConfig};
use crate::synergy::{
    bridge_orphans, chunk_entities, confirm_paths, orphan_entities, rerank_chunks, tally_votes,
    top_voted, ScoredChunk, ScoredPath, SynergyConfig,
};
use crate::tokens::TokenLedger;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub chunk_top_k: usize,
    pub path_top_k: usize,
    pub beam: BeamConfig,
    pub synergy: SynergyConfig,
    pub seeds: SeedConfig,
    /// Graph-vote re-ranking of text chunks.
    pub rerank: bool,
    /// Orphan-entity bridging from the search memory.
    pub bridging: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            chunk_top_k: 5,
            path_top_k: 5,
            beam: BeamConfig::default(),
            synergy: SynergyConfig::default(),
            seeds: SeedConfig::default(),
            rerank: true,
            bridging: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_top_k == 0 || self.path_top_k == 0 {
            return Err(Error::Invalid("chunk_top_k and path_top_k must be at least 1".into()));
        }
        self.beam.validate()?;
        self.synergy.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalDiagnostics {
    pub query_entities_cached: bool,
    pub nodes_explored: usize,
    pub memory_size: usize,
    pub depth_reached: usize,
    pub orphans_found: usize,
    /// Graph-store reads made while bridging; always zero.
    pub bridge_graph_reads: u64,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    #[serde(skip)]
    pub q_vec: Vec<f64>,
    pub query_entities: Vec<String>,
    pub seed_entities: BTreeSet<EntityId>,
    pub c_initial: Vec<(ChunkId, f64)>,
    pub chunks_final: Vec<ScoredChunk>,
    pub paths_final: Vec<ScoredPath>,
    pub bridge_paths: Vec<Path>,
    pub diagnostics: RetrievalDiagnostics,
}

/// Everything a query needs, borrowed from the caller so one set of
/// providers can serve many concurrent queries.
pub struct Pipeline<'a> {
    pub kb: &'a KnowledgeBase,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn LlmClient,
    pub cache: &'a QueryEntityCache,
    pub ledger: &'a TokenLedger,
    pub config: PipelineConfig,
}

impl Pipeline<'_> {
    pub fn retrieve(&self, query: &str) -> Result<RetrievalResult> {
        let cfg = &self.config;
        cfg.validate()?;
        let kb = self.kb;
        let mut res = RetrievalResult { query: query.to_string(), ..Default::default() };

        let qe = extract_query_entities(self.llm, self.cache, self.ledger, query);
        res.query_entities = qe.entities;
        res.diagnostics.query_entities_cached = qe.cached;
        let graph_enabled = match qe.diagnostic {
            Some(d) => {
                res.diagnostics.messages.push(d);
                res.diagnostics
                    .messages
                    .push("graph channel skipped; text channel only".into());
                false
            }
            None => true,
        };

        res.q_vec = self.embedder.embed(query, self.ledger)?;
        if kb.chunk_count() == 0 {
            return Ok(res);
        }

        // text channel
        res.c_initial = topk_chunks(kb, &res.q_vec, cfg.chunk_top_k)?;

        // graph channel
        let beam = if graph_enabled {
            res.seed_entities = select_seed_entities(
                kb,
                self.embedder,
                self.ledger,
                &res.query_entities,
                &res.q_vec,
                &cfg.seeds,
            )?;
            beam_search(kb, &res.q_vec, &res.seed_entities, &cfg.beam)?
        } else {
            Default::default()
        };
        res.diagnostics.nodes_explored = beam.nodes_explored;
        res.diagnostics.memory_size = beam.memory.len();
        res.diagnostics.depth_reached = beam.depth_reached;

        // graph -> text
        let votes = tally_votes(kb, &beam.memory)?;
        let recommended = if cfg.rerank { top_voted(&votes, cfg.synergy.k_r) } else { Vec::new() };
        let alpha = if cfg.rerank { cfg.synergy.alpha } else { 1.0 };
        let mut ranked = rerank_chunks(kb, &res.q_vec, &res.c_initial, &recommended, &votes, alpha)?;
        ranked.truncate(cfg.chunk_top_k);
        res.chunks_final = ranked;

        // text -> graph
        let initial_ids: Vec<ChunkId> = res.c_initial.iter().map(|(c, _)| c.clone()).collect();
        let text_entities = chunk_entities(kb, &initial_ids)?;
        let mut confirmed = confirm_paths(
            kb,
            &beam.paths,
            &text_entities,
            &res.q_vec,
            &res.seed_entities,
            &cfg.synergy,
        )?;
        confirmed.truncate(cfg.path_top_k);
        res.paths_final = confirmed;

        res.diagnostics.orphans_found = orphan_entities(&text_entities, &beam.paths).len();
        if cfg.bridging {
            let before = thread_graph_reads();
            res.bridge_paths = bridge_orphans(&text_entities, &beam.paths, &beam.memory, cfg.synergy.k_o);
            res.diagnostics.bridge_graph_reads = thread_graph_reads() - before;
        }
        Ok(res)
    }

    /// Renders the answer prompt for a retrieval result.
    pub fn consolidate(&self, result: &RetrievalResult) -> Result<String> {
        consolidate_context(self.kb, result)
    }

    pub fn generate(&self, context: &str) -> Result<String, ProviderError> {
        generate_answer(self.llm, self.ledger, context)
    }
}

fn render_path(kb: &KnowledgeBase, path: &Path) -> Result<String> {
    let mut line = path.entity_ids[0].to_string();
    for (rid, next) in path.relation_ids.iter().zip(&path.entity_ids[1..]) {
        let rel = kb
            .relation(rid)
            .ok_or_else(|| Error::Invalid(format!("unknown relation {rid}")))?;
        let kw = if rel.keywords.is_empty() {
            "related to".to_string()
        } else {
            rel.keywords.join(", ")
        };
        write!(line, " --({kw})--> {next}").expect("string write");
    }
    Ok(line)
}

/// Fills the answer template: reasoning paths (bridge paths listed as
/// supporting metadata), then evidence chunks with their source documents,
/// then the question.
pub fn consolidate_context(kb: &KnowledgeBase, result: &RetrievalResult) -> Result<String> {
    let mut paths = String::new();
    for (i, sp) in result.paths_final.iter().enumerate() {
        writeln!(paths, "- [Path {}] {}", i + 1, render_path(kb, &sp.path)?).expect("string write");
    }
    if !result.bridge_paths.is_empty() {
        paths.push_str("- Supporting metadata (bridge paths):\n");
        for (i, p) in result.bridge_paths.iter().enumerate() {
            writeln!(paths, "  - [Bridge {}] {}", i + 1, render_path(kb, p)?).expect("string write");
        }
    }
    if paths.is_empty() {
        paths.push_str("(none)");
    }

    let mut evidence = String::new();
    for (i, sc) in result.chunks_final.iter().enumerate() {
        let chunk = kb
            .chunk(&sc.chunk_id)
            .ok_or_else(|| Error::UnknownChunk(sc.chunk_id.to_string()))?;
        writeln!(
            evidence,
            "[Evidence {} (Source: {})]\n{}\n",
            i + 1,
            chunk.doc_id,
            chunk.text.trim()
        )
        .expect("string write");
    }
    if evidence.is_empty() {
        evidence.push_str("(none)");
    }
    Ok(prompts::answer_prompt(paths.trim_end(), evidence.trim_end(), &result.query))
}

pub fn generate_answer(
    llm: &dyn LlmClient,
    ledger: &TokenLedger,
    context: &str,
) -> Result<String, ProviderError> {
    llm.complete(&LlmRequest::user(context), ledger)
}

/// Plain-text rendering of a retrieval result with scores at six decimals.
pub fn render_result(result: &RetrievalResult) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "query: {}", result.query);
    let _ = writeln!(
        w,
        "query entities: [{}]{}",
        result.query_entities.join(", "),
        if result.diagnostics.query_entities_cached { " (cached)" } else { "" }
    );
    let seeds: Vec<&str> = result.seed_entities.iter().map(|e| e.as_str()).collect();
    let _ = writeln!(w, "seed entities: [{}]", seeds.join(", "));
    let _ = writeln!(w, "initial chunks:");
    for (i, (c, sim)) in result.c_initial.iter().enumerate() {
        let _ = writeln!(w, "  {}. {c} sim={sim:.6}", i + 1);
    }
    let _ = writeln!(w, "final chunks:");
    for (i, sc) in result.chunks_final.iter().enumerate() {
        let _ = writeln!(
            w,
            "  {}. {} score={:.6} sim={:.6} rec={}",
            i + 1,
            sc.chunk_id,
            sc.score_final,
            sc.sim,
            sc.rec
        );
    }
    let _ = writeln!(w, "paths:");
    for (i, sp) in result.paths_final.iter().enumerate() {
        let chain: Vec<&str> = sp.path.entity_ids.iter().map(|e| e.as_str()).collect();
        let _ = writeln!(
            w,
            "  {}. {} conf={:.6} base={:.6} confirmations={}",
            i + 1,
            chain.join(" -> "),
            sp.score_conf,
            sp.score_base,
            sp.confirmations
        );
    }
    let _ = writeln!(w, "bridge paths:");
    for (i, p) in result.bridge_paths.iter().enumerate() {
        let chain: Vec<&str> = p.entity_ids.iter().map(|e| e.as_str()).collect();
        let _ = writeln!(w, "  {}. {} memory_score={:.6}", i + 1, chain.join(" -> "), p.score);
    }
    let d = &result.diagnostics;
    let _ = writeln!(
        w,
        "diagnostics: nodes_explored={} memory_size={} depth_reached={} orphans_found={} bridge_graph_reads={}",
        d.nodes_explored, d.memory_size, d.depth_reached, d.orphans_found, d.bridge_graph_reads
    );
    for m in &d.messages {
        let _ = writeln!(w, "note: {m}");
    }
    s
}
