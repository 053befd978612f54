//! Embedding providers, cosine similarity and exact top-k search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ProviderError, Result};
use crate::exec::Exec;
use crate::kb::{ChunkId, Entity, EntityId, KnowledgeBase};
use crate::provider::{post_json, RemoteSpec, RetryPolicy};
use crate::tokens::{estimate_tokens, TokenKind, TokenLedger};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 1024;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds one text and records the tokens it consumed.
    fn embed(&self, text: &str, ledger: &TokenLedger) -> Result<Vec<f64>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Mock { seed: u64, dim: usize },
    Remote { remote: RemoteSpec, dim: usize },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Mock { seed: 0, dim: DEFAULT_DIM }
    }
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Mock { dim, .. } | EmbedderSpec::Remote { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Arc<dyn Embedder> {
        match self {
            EmbedderSpec::Mock { seed, dim } => Arc::new(MockEmbedder::new(*seed, *dim)),
            EmbedderSpec::Remote { remote, dim } => Arc::new(RemoteEmbedder {
                spec: remote.clone(),
                dim: *dim,
                retry: RetryPolicy::default(),
            }),
        }
    }
}

/// Bag-of-words hashing embedder.
///
/// Every whitespace token (lowercased, surrounding punctuation stripped) is
/// hashed with the seed into one coordinate and a sign; counts are summed and
/// the vector is L2-normalized. Texts that share words therefore score higher
/// cosine, which lets fixtures engineer similarity orderings.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }

    pub fn vector(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut tokens: Vec<String> = text
            .split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens = text.split_whitespace().map(str::to_lowercase).collect();
        }
        let mut v = vec![0.0f64; self.dim];
        for tok in &tokens {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(tok.as_bytes());
            let digest = h.finalize();
            let idx = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[idx as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str, ledger: &TokenLedger) -> Result<Vec<f64>, ProviderError> {
        let v = self.vector(text)?;
        ledger.add(TokenKind::Embedding, estimate_tokens(text));
        Ok(v)
    }
}

/// Embedding service speaking `POST {model, input: [text]}`.
///
/// Accepts either `{embedding: [...], usage: {tokens}}` or the OpenAI-style
/// `{data: [{embedding: [...]}], usage: {total_tokens}}` response shape.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub spec: RemoteSpec,
    pub dim: usize,
    pub retry: RetryPolicy,
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str, ledger: &TokenLedger) -> Result<Vec<f64>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let body = serde_json::json!({ "model": self.spec.model, "input": [text] });
        let resp = self.retry.run(|| post_json(&self.spec, &body))?;
        let (vector, tokens) = parse_embedding_response(&resp)?;
        if vector.len() != self.dim {
            return Err(ProviderError::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        ledger.add(TokenKind::Embedding, tokens.unwrap_or_else(|| estimate_tokens(text)));
        Ok(vector)
    }
}

pub(crate) fn parse_embedding_response(
    resp: &serde_json::Value,
) -> Result<(Vec<f64>, Option<u64>), ProviderError> {
    let arr = resp
        .get("embedding")
        .or_else(|| resp.pointer("/data/0/embedding"))
        .and_then(|v| v.as_array())
        .ok_or_else(|| ProviderError::Malformed("no embedding array in response".into()))?;
    let vector = arr
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| ProviderError::Malformed("non-numeric embedding value".into())))
        .collect::<Result<Vec<f64>, _>>()?;
    let tokens = ["/usage/tokens", "/usage/total_tokens", "/usage/prompt_tokens"]
        .iter()
        .find_map(|p| resp.pointer(p).and_then(|v| v.as_u64()));
    Ok((vector, tokens))
}

/// Which entity fields feed the entity embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityText {
    Name,
    /// `"name: description"`, or the bare name when the description is empty.
    #[default]
    NameAndDescription,
}

impl EntityText {
    pub fn render(self, entity: &Entity) -> String {
        match self {
            EntityText::NameAndDescription if !entity.description.is_empty() => {
                format!("{}: {}", entity.id, entity.description)
            }
            _ => entity.id.to_string(),
        }
    }
}

/// Cosine similarity, clamped to [-1, 1]. A zero vector on either side
/// yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Score descending, then id ascending.
pub fn by_score_then_id<K: Ord>(a: &(K, f64), b: &(K, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Exhaustive top-k scan over `store`.
pub fn topk_in<K>(store: &BTreeMap<K, Vec<f64>>, q: &[f64], k: usize, exec: Exec) -> Result<Vec<(K, f64)>>
where
    K: Ord + Clone + Send + Sync,
{
    if k == 0 {
        return Err(Error::Invalid("top-k requires k >= 1".into()));
    }
    let entries: Vec<(&K, &Vec<f64>)> = store.iter().collect();
    let scored = exec.map(&entries, |(id, v)| cosine(v, q).map(|s| ((*id).clone(), s)));
    let mut scored = scored.into_iter().collect::<Result<Vec<_>>>()?;
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_score_then_id);
        scored.truncate(k);
    }
    scored.sort_by(by_score_then_id);
    Ok(scored)
}

pub fn topk_chunks(kb: &KnowledgeBase, q: &[f64], k: usize) -> Result<Vec<(ChunkId, f64)>> {
    topk_chunks_with(kb, q, k, Exec::default())
}

pub fn topk_chunks_with(kb: &KnowledgeBase, q: &[f64], k: usize, exec: Exec) -> Result<Vec<(ChunkId, f64)>> {
    topk_in(kb.chunk_embeddings(), q, k, exec)
}

pub fn topk_entities(kb: &KnowledgeBase, q: &[f64], k: usize) -> Result<Vec<(EntityId, f64)>> {
    topk_entities_with(kb, q, k, Exec::default())
}

pub fn topk_entities_with(
    kb: &KnowledgeBase,
    q: &[f64],
    k: usize,
    exec: Exec,
) -> Result<Vec<(EntityId, f64)>> {
    topk_in(kb.entity_embeddings(), q, k, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KbBuilder;
    use proptest::prelude::*;

    #[test]
    fn mock_is_deterministic_and_unit_norm() {
        let e = MockEmbedder::new(7, DEFAULT_DIM);
        let l = TokenLedger::new();
        let a = e.embed("abc", &l).unwrap();
        let b = e.embed("abc", &l).unwrap();
        assert_eq!(a, b);
        let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
        assert_eq!(l.snapshot().embedding_tokens, 2);
        assert!(e.embed("   ", &l).is_err());
    }

    #[test]
    fn mock_seed_matters_and_overlap_raises_similarity() {
        let e = MockEmbedder::new(1, 256);
        let q = e.vector("which actress starred in signs").unwrap();
        let near = e.vector("the actress starred in signs").unwrap();
        let far = e.vector("quantum chromodynamics lecture").unwrap();
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
        let other = MockEmbedder::new(2, 256).vector("which actress starred in signs").unwrap();
        assert_ne!(q, other);
        // punctuation and case do not change tokens
        assert_eq!(e.vector("Signs.").unwrap(), e.vector("signs").unwrap());
    }

    #[test]
    fn cosine_reference_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        let u = [0.6, 0.8];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn remote_response_shapes() {
        let a = serde_json::json!({"embedding": [0.5, 0.5], "usage": {"tokens": 3}});
        assert_eq!(parse_embedding_response(&a).unwrap(), (vec![0.5, 0.5], Some(3)));
        let b = serde_json::json!({"data": [{"embedding": [1.0]}], "usage": {"total_tokens": 9}});
        assert_eq!(parse_embedding_response(&b).unwrap(), (vec![1.0], Some(9)));
        assert!(parse_embedding_response(&serde_json::json!({"x": 1})).is_err());
    }

    fn store_kb(vectors: &[(&str, Vec<f64>)]) -> KnowledgeBase {
        let mut b = KbBuilder::new(2);
        for (doc, v) in vectors {
            let c = b.upsert_chunk(doc, 0, "t").unwrap();
            b.set_chunk_embedding(&c, v.clone()).unwrap();
        }
        b.freeze().unwrap()
    }

    #[test]
    fn topk_engineered_similarities() {
        // cos with q=(1,0): 0.9, 0.5, 0.1
        let unit = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let kb = store_kb(&[("lo", unit(0.1)), ("hi", unit(0.9)), ("mid", unit(0.5))]);
        let top = topk_chunks(&kb, &[1.0, 0.0], 2).unwrap();
        let ids: Vec<&str> = top.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(ids, ["hi#0", "mid#0"]);
        assert!((top[0].1 - 0.9).abs() < 1e-12);
        let all = topk_chunks(&kb, &[1.0, 0.0], 10).unwrap();
        assert_eq!(all.len(), 3);
        assert!(topk_chunks(&kb, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn topk_ties_by_id() {
        let kb = store_kb(&[("b", vec![1.0, 1.0]), ("a", vec![1.0, 1.0])]);
        let top = topk_chunks(&kb, &[1.0, 0.0], 2).unwrap();
        assert_eq!(top[0].0.as_str(), "a#0");
        assert_eq!(top[1].0.as_str(), "b#0");
        assert!(topk_chunks(&KnowledgeBase::empty(2), &[1.0, 0.0], 3).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn topk_is_prefix_of_full_sort(
            vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..25),
            q in prop::collection::vec(-1.0f64..1.0, 3),
            k in 1usize..30,
        ) {
            let store: BTreeMap<String, Vec<f64>> =
                vs.into_iter().enumerate().map(|(i, v)| (format!("c{i:02}"), v)).collect();
            let mut full: Vec<(String, f64)> =
                store.iter().map(|(id, v)| (id.clone(), cosine(v, &q).unwrap())).collect();
            full.sort_by(by_score_then_id);
            full.truncate(k);
            prop_assert_eq!(topk_in(&store, &q, k, Exec::Sequential).unwrap(), full.clone());
            prop_assert_eq!(topk_in(&store, &q, k, Exec::Parallel).unwrap(), full);
        }

        #[test]
        fn cosine_is_symmetric(
            u in prop::collection::vec(-10.0f64..10.0, 6),
            v in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let a = cosine(&u, &v).unwrap();
            let b = cosine(&v, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
