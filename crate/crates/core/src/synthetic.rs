//! Synthetic corpora with planted two-hop chains, for exercising the
//! ablation switches without a real dataset or a real extractor.
//!
//! Every query lives in its own small "world" of documents whose names and
//! vocabulary are unique pseudo-words, so worlds do not leak into each other
//! under the hashing embedder. Two world shapes are generated:
//!
//! * bridge worlds: two query entities share a neighbor that a narrow beam
//!   prunes in favor of decoys. Its document is recovered only by replaying
//!   the neighbor's path from memory.
//! * vote worlds: the gold document sits behind an entity the beam explores
//!   but discards. Nothing in it resembles the question, so only graph votes
//!   pull it into the final chunk list.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{write_jsonl, CorpusDoc, QAItem};
use crate::error::Result;
use crate::extraction::BuildConfig;
use crate::fixtures::{add_extractions, add_query_entities};
use crate::llm::MockLlm;
use crate::pipeline::PipelineConfig;
use crate::search::BeamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    Bridge,
    Vote,
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticSet {
    pub corpus: Vec<CorpusDoc>,
    pub items: Vec<QAItem>,
    pub kinds: Vec<WorldKind>,
    /// Extraction responses keyed `doc#0`.
    pub extractions: BTreeMap<String, String>,
    /// Query-entity responses keyed by question.
    pub query_entities: BTreeMap<String, String>,
}

impl SyntheticSet {
    /// A mock LLM that answers every extraction and query-entity prompt the
    /// set needs under `build`.
    pub fn mock_llm(&self, build: &BuildConfig) -> Result<MockLlm> {
        let mut llm = MockLlm::new();
        add_extractions(&mut llm, &self.corpus, build, &self.extractions)?;
        add_query_entities(&mut llm, &self.query_entities);
        Ok(llm)
    }

    /// Writes `corpus.jsonl`, `qa.jsonl` and a `fixtures/` replay directory.
    pub fn write_dir(&self, dir: impl AsRef<Path>, build: &BuildConfig) -> Result<()> {
        let dir = dir.as_ref();
        write_jsonl(dir.join("corpus.jsonl"), &self.corpus)?;
        write_jsonl(dir.join("qa.jsonl"), &self.items)?;
        self.mock_llm(build)?.save_dir(dir.join("fixtures"))
    }
}

/// The retrieval settings the worlds are shaped for: a beam of two, two hops
/// and three chunks. Everything else stays at its default.
pub fn ablation_config() -> PipelineConfig {
    PipelineConfig {
        chunk_top_k: 3,
        beam: BeamConfig { beam_width: 2, max_depth: 2, ..Default::default() },
        ..Default::default()
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "n", "r", "l", "s", "x", "th"];

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[self.rng.gen_range(0..ONSETS.len())]);
                w.push_str(VOWELS[self.rng.gen_range(0..VOWELS.len())]);
            }
            w.push_str(CODAS[self.rng.gen_range(0..CODAS.len())]);
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn name(&mut self) -> String {
        format!("{} {}", capitalize(&self.word()), capitalize(&self.word()))
    }

    fn filler(&mut self, n: usize) -> String {
        (0..n).map(|_| self.word()).collect::<Vec<_>>().join(" ")
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn entity(name: &str, category: &str, desc: &str) -> String {
    json!({"type": "entity", "name": name, "category": category, "desc": desc}).to_string()
}

fn relation(source: &str, target: &str, keyword: &str) -> String {
    json!({"type": "relation", "source": source, "target": target, "keywords": [keyword], "desc": format!("{source} {keyword} {target}")})
        .to_string()
}

fn response(lines: Vec<String>) -> String {
    let mut s = lines.join("\n");
    s.push_str("\n<|COMPLETE|>");
    s
}

#[derive(Default)]
struct Builder {
    set: SyntheticSet,
}

impl Builder {
    fn doc(&mut self, title: &str, text: String, records: Vec<String>) {
        let set = &mut self.set;
        set.corpus.push(CorpusDoc { id: title.to_string(), title: title.to_string(), text });
        set.extractions.insert(format!("{title}#0"), response(records));
    }

    fn item(&mut self, kind: WorldKind, question: String, entities: &[&str], answer: &str, gold: &[&str]) {
        let set = &mut self.set;
        let id = format!("syn-{}", set.items.len() + 1);
        set.query_entities.insert(question.clone(), json!(entities).to_string());
        set.items.push(QAItem {
            id,
            question,
            answer: answer.to_string(),
            aliases: Vec::new(),
            gold_support_docs: gold.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        });
        set.kinds.push(kind);
    }
}

fn bridge_world(w: &mut Words, b: &mut Builder) {
    let (kw1, kw2) = (w.word(), w.word());
    let [a, bb, p, xa, xb, d] = [(); 6].map(|_| w.name());

    b.doc(
        &a,
        format!("{a} is a {}. {xa} is the {kw1} {kw2} of {a}. {p} appears in {a}.", w.filler(2)),
        vec![
            entity(&a, "work", &w.filler(2)),
            entity(&xa, "person", &format!("{kw1} {kw2} {}", w.word())),
            entity(&p, "person", &w.word()),
            relation(&a, &xa, "credits"),
            relation(&a, &p, "cast"),
        ],
    );
    b.doc(
        &bb,
        format!("{bb} is a {}. {xb} is the {kw1} {kw2} of {bb}. {p} appears in {bb}.", w.filler(2)),
        vec![
            entity(&bb, "work", &w.filler(2)),
            entity(&xb, "person", &format!("{kw1} {kw2} {}", w.word())),
            entity(&p, "person", &w.word()),
            relation(&bb, &xb, "credits"),
            relation(&bb, &p, "cast"),
        ],
    );
    b.doc(&p, format!("{p} is a {}.", w.filler(3)), vec![entity(&p, "person", &w.filler(3))]);
    b.doc(
        &d,
        format!("{d} is a {kw1} {kw2} {}.", w.word()),
        vec![entity(&d, "person", &format!("{kw1} {kw2}"))],
    );
    b.item(
        WorldKind::Bridge,
        format!("Which {kw1} {kw2} connects {a} and {bb}?"),
        &[&a, &bb],
        &p,
        &[&a, &bb, &p],
    );
}

fn vote_world(w: &mut Words, b: &mut Builder) {
    let (kw1, kw2) = (w.word(), w.word());
    let [a, x, x2, x3, s, y, r1, r2, r3, d] = [(); 10].map(|_| w.name());

    b.doc(
        &a,
        format!("{a} is a {}. {x} is the {kw1} {kw2} of {a}.", w.filler(2)),
        vec![entity(&a, "organization", &w.filler(2)), entity(&x, "concept", &format!("{kw1} {kw2}")), relation(&a, &x, "has")],
    );
    b.doc(
        &x,
        format!("{x} is a {kw1} {kw2} with {x2}, {x3}."),
        vec![
            entity(&x, "concept", &format!("{kw1} {kw2}")),
            entity(&x2, "concept", &format!("{kw1} {}", w.word())),
            entity(&x3, "concept", &format!("{kw2} {}", w.word())),
            relation(&x, &x2, "includes"),
            relation(&x, &x3, "includes"),
        ],
    );
    b.doc(
        &s,
        format!("{s} is a {} record. {a} holds {y}.", w.filler(8)),
        vec![entity(&a, "organization", &w.filler(2)), entity(&y, "concept", &w.word()), relation(&a, &y, "holds")],
    );
    b.doc(
        &r1,
        format!("{r1} is a {}. {y} works with {r1}, {r2}, {r3}.", w.filler(2)),
        vec![
            entity(&y, "concept", &w.word()),
            entity(&r1, "person", &w.word()),
            entity(&r2, "person", &w.word()),
            entity(&r3, "person", &w.word()),
            relation(&y, &r1, "works with"),
            relation(&y, &r2, "works with"),
            relation(&y, &r3, "works with"),
        ],
    );
    b.doc(
        &d,
        format!("{d} is a {kw1} {kw2} {}.", w.word()),
        vec![entity(&d, "concept", &format!("{kw1} {kw2}"))],
    );
    b.item(WorldKind::Vote, format!("Which {kw1} {kw2} does {a} have?"), &[&a], &r1, &[&a, &r1]);
}

/// Generates `per_kind` bridge worlds and `per_kind` vote worlds, interleaved.
pub fn generate(seed: u64, per_kind: usize) -> SyntheticSet {
    let mut words = Words { rng: ChaCha8Rng::seed_from_u64(seed), used: HashSet::new() };
    let mut b = Builder::default();
    for _ in 0..per_kind {
        bridge_world(&mut words, &mut b);
        vote_world(&mut words, &mut b);
    }
    b.set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_corpus;

    #[test]
    fn deterministic_and_unique() {
        let a = generate(7, 5);
        let b = generate(7, 5);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.items, b.items);
        assert_eq!(a.items.len(), 10);
        let ids: HashSet<_> = a.corpus.iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), a.corpus.len());
        for item in &a.items {
            for g in &item.gold_support_docs {
                assert!(ids.contains(g), "{g}");
            }
        }
        assert_ne!(generate(8, 5).corpus, a.corpus);
    }

    #[test]
    fn writes_a_loadable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate(1, 2);
        set.write_dir(dir.path(), &BuildConfig::default()).unwrap();
        assert_eq!(read_corpus(dir.path().join("corpus.jsonl")).unwrap(), set.corpus);
        let llm = MockLlm::from_dir(dir.path().join("fixtures")).unwrap();
        assert_eq!(llm.len(), set.extractions.len() + set.query_entities.len());
    }
}
