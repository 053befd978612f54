//! Sequential against rayon execution for the three data-parallel stages:
//! the exhaustive top-k scan, knowledge-base construction and a batch of
//! evaluation queries. Build with `--no-default-features` to confirm both
//! variants collapse to the sequential path.

use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use textgraph::embedding::{topk_in, MockEmbedder, DEFAULT_DIM};
use textgraph::eval::{run_eval, EvalConfig, EvalProviders};
use textgraph::exec::Exec;
use textgraph::extraction::{build_kb, BuildConfig, QueryEntityCache};
use textgraph::synthetic::{ablation_config, generate};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn topk_scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dim = 256;
    let store: BTreeMap<usize, Vec<f64>> =
        (0..20_000).map(|i| (i, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
    let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("topk_scan_20k");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| topk_in(black_box(&store), &q, 5, exec).unwrap()));
    }
    group.finish();
}

fn kb_build(c: &mut Criterion) {
    let set = generate(0, 20);
    let emb = MockEmbedder::new(0, DEFAULT_DIM);
    let mut group = c.benchmark_group("build_kb_synthetic");
    group.sample_size(10);
    for (name, exec) in MODES {
        let build = BuildConfig { exec, ..Default::default() };
        let llm = set.mock_llm(&build).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(name), &build, |b, build| {
            b.iter(|| build_kb(&set.corpus, &llm, &emb, build).unwrap())
        });
    }
    group.finish();
}

fn eval_batch(c: &mut Criterion) {
    let set = generate(0, 25);
    let build = BuildConfig::default();
    let llm = set.mock_llm(&build).unwrap();
    let emb = MockEmbedder::new(0, DEFAULT_DIM);
    let kb = build_kb(&set.corpus, &llm, &emb, &build).unwrap().kb;
    let mut group = c.benchmark_group("eval_50_queries");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = EvalConfig { pipeline: ablation_config(), generate: false, exec };
        group.bench_function(name, |b| {
            b.iter(|| {
                let cache = QueryEntityCache::new();
                let providers = EvalProviders { embedder: &emb, llm: &llm, judge: None, cache: &cache };
                run_eval(&kb, &providers, &set.items, &cfg, "bench").unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, topk_scan, kb_build, eval_batch);
criterion_main!(benches);
