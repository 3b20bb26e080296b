//! Sequential vs rayon execution of sharded batch gradients and contrastive scoring.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use docnmt::corpus::{build_context, make_contrastive_set, make_synthetic_split, ContextMode, GrammarParams};
use docnmt::evaluator::{score_contrastive_set, ContextProbe};
use docnmt::exec::Execution;
use docnmt::model::{init_parameters, ModelConfig, ModelParams};
use docnmt::tokenizer::train_bpe;
use docnmt::trainer::{batch_gradients, encode_examples};

fn modes() -> Vec<(&'static str, Execution)> {
    let mut m = vec![("sequential", Execution::Sequential)];
    if Execution::parallel_available() {
        m.push(("parallel", Execution::Parallel));
    }
    m
}

fn benches(c: &mut Criterion) {
    let docs = make_synthetic_split(40, 8, 7, &GrammarParams::default(), "bench").unwrap();
    let lines: Vec<&str> = docs.iter().flat_map(|d| d.doc.sources().chain(d.doc.targets())).collect();
    let bpe = train_bpe(&lines, 300).unwrap();
    let params: ModelParams<f32> = init_parameters(&ModelConfig::desk(bpe.vocab_size()), 1).unwrap();
    let plain: Vec<_> = docs.iter().map(|d| d.doc.clone()).collect();
    let examples = build_context(&plain, ContextMode::Prev, 2, 1).unwrap();
    let batch = encode_examples(&bpe, &examples[..32], 64);
    let set = make_contrastive_set(&docs, 2);
    let set = &set[..set.len().min(48)];

    let mut g = c.benchmark_group("batch_gradients_32");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradients(&params, &batch, false, true, 3, 8, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("contrastive_scoring");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::new(name, set.len()), |b| {
            b.iter(|| score_contrastive_set(&params, &bpe, set, ContextProbe::Prev(2), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
