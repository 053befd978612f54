#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use textgraph::corpus::{read_corpus, read_qa, CorpusDoc, QAItem};
use textgraph::embedding::{EmbedderSpec, MockEmbedder};
use textgraph::extraction::{build_kb, BuildConfig, QueryEntityCache};
use textgraph::fixtures::{add_extractions, add_query_entities, parse_sections};
use textgraph::kb::{EntityId, KbBuilder, KnowledgeBase};
use textgraph::llm::MockLlm;
use textgraph::pipeline::PipelineConfig;
use textgraph::search::BeamConfig;

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy")
}

pub fn toy_corpus() -> Vec<CorpusDoc> {
    read_corpus(toy_dir().join("corpus.jsonl")).unwrap()
}

pub fn toy_qa() -> Vec<QAItem> {
    read_qa(toy_dir().join("qa.jsonl")).unwrap()
}

pub fn sections(name: &str) -> std::collections::BTreeMap<String, String> {
    parse_sections(&fs::read_to_string(toy_dir().join(name)).unwrap()).unwrap()
}

/// Extraction and query-entity fixtures, built from the section files.
pub fn toy_retrieval_llm() -> MockLlm {
    let mut llm = MockLlm::new();
    add_extractions(&mut llm, &toy_corpus(), &BuildConfig::default(), &sections("extractions.txt")).unwrap();
    add_query_entities(&mut llm, &sections("query_entities.txt"));
    llm
}

pub fn toy_embedder() -> MockEmbedder {
    let EmbedderSpec::Mock { seed, dim } = EmbedderSpec::default() else { unreachable!() };
    MockEmbedder::new(seed, dim)
}

pub fn toy_kb() -> KnowledgeBase {
    build_kb(&toy_corpus(), &toy_retrieval_llm(), &toy_embedder(), &BuildConfig::default())
        .unwrap()
        .kb
}

/// Narrow beam so the shared cast member is pruned.
pub fn toy_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        chunk_top_k: 3,
        beam: BeamConfig { beam_width: 1, max_depth: 2, ..Default::default() },
        ..Default::default()
    }
}

pub fn fresh_cache() -> QueryEntityCache {
    QueryEntityCache::new()
}

/// Every fixture the toy corpus needs: extraction, query entities, answers
/// for the contexts produced under `toy_pipeline_config`, and judge verdicts.
pub fn toy_full_llm() -> MockLlm {
    toy_llm_without_answer(None)
}

/// As [`toy_full_llm`] but with no answer (and so no verdict) for the
/// question `skip`.
pub fn toy_llm_without_answer(skip: Option<&str>) -> MockLlm {
    use textgraph::fixtures::{add_answer, add_verdict};
    use textgraph::pipeline::Pipeline;
    use textgraph::tokens::TokenLedger;

    let kb = toy_kb();
    let mut llm = toy_retrieval_llm();
    let answers = sections("answers.txt");
    let verdicts = sections("verdicts.txt");
    let emb = toy_embedder();
    let mut contexts = Vec::new();
    {
        let cache = QueryEntityCache::new();
        let ledger = TokenLedger::new();
        let p = Pipeline {
            kb: &kb,
            embedder: &emb,
            llm: &llm,
            cache: &cache,
            ledger: &ledger,
            config: toy_pipeline_config(),
        };
        for item in toy_qa() {
            let r = p.retrieve(&item.question).unwrap();
            contexts.push((item.clone(), p.consolidate(&r).unwrap()));
        }
    }
    for (item, ctx) in contexts {
        if skip == Some(item.question.as_str()) {
            continue;
        }
        let answer = &answers[&item.question];
        add_answer(&mut llm, &ctx, answer);
        add_verdict(&mut llm, &item, answer, &verdicts[&item.question]);
    }
    llm
}

pub fn toy_fixture_dir() -> PathBuf {
    toy_dir().join("fixtures")
}

/// A knowledge base holding only a graph: entities `N00`, `N01`, ... with
/// the given vectors, one relation per edge (self-loops skipped), and a
/// single chunk every entity cites.
pub fn graph_kb(vecs: &[Vec<f64>], edges: &[(usize, usize)]) -> (KnowledgeBase, Vec<EntityId>) {
    let dim = vecs[0].len();
    let names: Vec<EntityId> = (0..vecs.len()).map(|i| EntityId::new(&format!("N{i:02}")).unwrap()).collect();
    let mut b = KbBuilder::new(dim);
    let chunk = b.upsert_chunk("g", 0, "graph").unwrap();
    for (name, v) in names.iter().zip(vecs) {
        b.upsert_entity(name.as_str(), "concept", "", &chunk).unwrap();
        b.set_entity_embedding(name, v.clone()).unwrap();
    }
    for &(x, y) in edges {
        if x != y {
            b.upsert_relation(names[x].as_str(), names[y].as_str(), &[], "", &chunk).unwrap();
        }
    }
    b.set_chunk_embedding(&chunk, vecs[0].clone()).unwrap();
    (b.freeze().unwrap(), names)
}
