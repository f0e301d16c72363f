use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use charlm_bench::{desk_arch, first_batch, synthetic_corpus};
use charlm_core::evaluation::{score_corpus, ScoreOptions};
use charlm_core::neural::matrix::{gemm_acc, gemm_at_b_acc};
use charlm_core::neural::{backward, forward, Mode};
use charlm_core::training::{init_model, init_params};

fn gemm(c: &mut Criterion) {
    let (m, k, n) = (64, 256, 512);
    let a: Vec<f64> = (0..m * k).map(|i| (i % 17) as f64 * 0.01).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i % 13) as f64 * 0.02).collect();
    let mut g = c.benchmark_group("gemm");
    g.throughput(Throughput::Elements((2 * m * k * n) as u64));
    g.bench_function("a_b", |bench| {
        let mut out = vec![0.0; m * n];
        bench.iter(|| gemm_acc(black_box(&a), black_box(&b), &mut out, m, k, n));
    });
    // Weight-gradient shape: `a[k×m]ᵀ · b[k×n]` summed over the k batch rows.
    let bt = &b[..k * n];
    let at: Vec<f64> = (0..k * m).map(|i| (i % 11) as f64 * 0.01).collect();
    g.bench_function("at_b", |bench| {
        let mut out = vec![0.0; m * n];
        bench.iter(|| gemm_at_b_acc(black_box(&at), black_box(bt), &mut out, k, m, n));
    });
    g.finish();
}

fn network(c: &mut Criterion) {
    let (vocab, corpus) = synthetic_corpus(400, 1);
    let params = init_params(desk_arch(&vocab), 1);
    let batch = first_batch(&corpus, 32, 50);
    let mut g = c.benchmark_group("network");
    g.throughput(Throughput::Elements(batch.active_tokens() as u64));
    g.bench_function("forward_eval", |bench| {
        bench.iter(|| forward(black_box(&params), &batch, Mode::Eval).unwrap());
    });
    g.bench_function("forward_backward_train", |bench| {
        bench.iter(|| {
            let (_, cache) = forward(black_box(&params), &batch, Mode::Train { dropout: 0.2, seed: 3 }).unwrap();
            backward(&params, cache).unwrap()
        });
    });
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let (vocab, corpus) = synthetic_corpus(200, 2);
    let ckpt = init_model(desk_arch(&vocab), &vocab.hash(), 1);
    let classes = charlm_core::evaluation::vocabulary_classes(&vocab, &charlm_core::corpus::VowelSet::english());
    let mut g = c.benchmark_group("scoring");
    g.sample_size(10);
    g.throughput(Throughput::Elements(corpus.prediction_count() as u64));
    g.bench_function("score_corpus", |bench| {
        bench.iter(|| score_corpus(&ckpt, &corpus, &classes, ScoreOptions::default()).unwrap());
    });
    g.finish();
}

criterion_group!(benches, gemm, network, scoring);
criterion_main!(benches);
