mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use textgraph::eval::{provenance_docs, retrieval_metrics};
use textgraph::kb::{store, ChunkId, EntityId};
use textgraph::pipeline::RetrievalResult;
use textgraph::search::{beam_search, BeamConfig, Path};
use textgraph::synergy::{bridge_orphans, fuse_scores, orphan_entities};

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// Vectors, edges, seeds, query, K and depth for a small random graph.
fn graph_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<(usize, usize)>, Vec<usize>, Vec<f64>, usize, usize)> {
    (2usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(unit_vec(4), n),
            prop::collection::vec((0..n, 0..n), 0..25),
            prop::collection::btree_set(0..n, 1..=n.min(3)).prop_map(|s| s.into_iter().collect()),
            unit_vec(4),
            1usize..5,
            1usize..4,
        )
    })
}

fn doc_set() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set("[a-f]", 0..6)
}

proptest! {
    #[test]
    fn metric_identities(d_ret in doc_set(), gold in doc_set()) {
        prop_assume!(!gold.is_empty());
        let m = retrieval_metrics(&d_ret, &gold).unwrap();
        for x in [m.recall, m.precision, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if m.precision + m.recall > 0.0 {
            let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - f1).abs() < 1e-12);
        } else {
            prop_assert_eq!(m.f1, 0.0);
        }
        prop_assert_eq!(m.hit, gold.is_subset(&d_ret));
        if m.hit {
            prop_assert_eq!(m.recall, 1.0);
        }
    }

    #[test]
    fn fused_scores_are_bounded_and_order_free(
        raw in prop::collection::vec((0.0f64..1.0, 0usize..8), 1..10),
        alpha in 0.0f64..=1.0,
        rot in 0usize..10,
    ) {
        let pool: Vec<(ChunkId, f64, usize)> = raw
            .iter()
            .enumerate()
            .map(|(i, (s, r))| (ChunkId::from_raw(format!("c{i}")), *s, *r))
            .collect();
        let out = fuse_scores(&pool, alpha);
        prop_assert_eq!(out.len(), pool.len());
        for s in &out {
            prop_assert!(s.score_final >= -1e-12 && s.score_final <= 1.0 + 1e-12);
        }
        for w in out.windows(2) {
            prop_assert!(w[0].score_final >= w[1].score_final);
        }
        let mut rotated = pool.clone();
        rotated.rotate_left(rot % pool.len());
        prop_assert_eq!(fuse_scores(&rotated, alpha), out);
    }

    #[test]
    fn beam_paths_are_simple_and_bounded((vecs, edges, seeds, q, k, d) in graph_case()) {
        let (kb, names) = common::graph_kb(&vecs, &edges);
        let seed_ids: BTreeSet<EntityId> = seeds.iter().map(|&i| names[i].clone()).collect();
        let cfg = BeamConfig { beam_width: k, max_depth: d, ..Default::default() };
        let out = beam_search(&kb, &q, &seed_ids, &cfg).unwrap();
        prop_assert!(out.paths.len() <= k.max(seed_ids.len()));
        for p in &out.paths {
            let distinct: BTreeSet<_> = p.entity_ids.iter().collect();
            prop_assert_eq!(distinct.len(), p.len());
            prop_assert!(p.len() <= d + 1);
            prop_assert_eq!(p.relation_ids.len() + 1, p.len());
            prop_assert!(seed_ids.contains(&p.entity_ids[0]));
            for e in &p.entity_ids {
                prop_assert!(out.memory.contains(e));
            }
        }
        for s in &seed_ids {
            prop_assert_eq!(out.memory.get(s).unwrap().score, 1.0);
        }
    }

    #[test]
    fn bridges_replay_memory((vecs, edges, seeds, q, k, d) in graph_case(), mask in any::<u16>(), k_o in 0usize..4) {
        let (kb, names) = common::graph_kb(&vecs, &edges);
        let seed_ids: BTreeSet<EntityId> = seeds.iter().map(|&i| names[i].clone()).collect();
        let cfg = BeamConfig { beam_width: k, max_depth: d, ..Default::default() };
        let out = beam_search(&kb, &q, &seed_ids, &cfg).unwrap();
        let text: BTreeSet<EntityId> = names.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| e.clone()).collect();
        let orphans = orphan_entities(&text, &out.paths);
        let bridges = bridge_orphans(&text, &out.paths, &out.memory, k_o);
        prop_assert!(bridges.len() <= k_o);
        prop_assert_eq!(bridges.len(), k_o.min(orphans.iter().filter(|e| out.memory.contains(e)).count()));
        for b in &bridges {
            prop_assert!(orphans.contains(b.last()));
            prop_assert_eq!(&out.memory.get(b.last()).unwrap().path, b);
        }
    }

    #[test]
    fn adding_a_path_never_shrinks_provenance(extra in prop::collection::vec(0usize..12, 1..4)) {
        let kb = common::toy_kb();
        let all: Vec<EntityId> = kb.entities().map(|e| e.id.clone()).collect();
        let mut result = RetrievalResult::default();
        result.bridge_paths.push(Path::seed(all[0].clone()));
        let before = provenance_docs(&kb, &result).unwrap();
        let mut p = Path::seed(all[extra[0] % all.len()].clone());
        for i in &extra[1..] {
            p.entity_ids.push(all[i % all.len()].clone());
        }
        result.bridge_paths.push(p);
        let after = provenance_docs(&kb, &result).unwrap();
        prop_assert!(before.is_subset(&after));
    }

    #[test]
    fn store_round_trips_random_graphs((vecs, edges, ..) in graph_case()) {
        let (kb, _) = common::graph_kb(&vecs, &edges);
        let dir = tempfile::tempdir().unwrap();
        store::save(&kb, dir.path()).unwrap();
        let first = store::snapshot_dir(dir.path()).unwrap();
        let back = store::load(dir.path()).unwrap();
        prop_assert!(back == kb);
        let again = tempfile::tempdir().unwrap();
        store::save(&back, again.path()).unwrap();
        prop_assert_eq!(store::snapshot_dir(again.path()).unwrap(), first);
    }
}
