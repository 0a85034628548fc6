use std::collections::HashMap;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weakrank_core::aggregation::{fit_generative_model, marginal_log_likelihood, FitOptions, GenerativeParams};
use weakrank_core::eval::{auc, average_precision};
use weakrank_core::labeling::{apply_labeling_functions, LabelMatrix, LabelScheme, LabelingFunction, ScoreContext, ScoreSource};
use weakrank_core::lexical::{Bm25Params, TokenizerConfig};
use weakrank_core::synthetic::{text_benchmark, TextBenchOptions};
use weakrank_core::trainer::{gradient, ScorerParams, TrainOptions, TripletFeatures};

fn sampled_matrix(n: usize, k: usize, seed: u64) -> LabelMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<i8>> = (0..n)
        .map(|_| {
            let y = if rng.random_bool(0.1) { 1 } else { -1 };
            (0..k)
                .map(|_| match rng.random_range(0..10) {
                    0..=3 => 0,
                    4..=8 => y,
                    _ => -y,
                })
                .collect()
        })
        .collect();
    LabelMatrix::from_rows(
        (0..k).map(|j| format!("f{j}")).collect(),
        (0..n).map(|i| (format!("q{}", i / 20), format!("p{i}"))).collect(),
        &rows,
    )
    .unwrap()
}

fn labeling(c: &mut Criterion) {
    let bench = text_benchmark(
        &TextBenchOptions {
            train_queries: 200,
            candidates: 20,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let stores: HashMap<_, _> = bench
        .stores
        .iter()
        .map(|(n, s)| (n.clone(), Arc::new(s.clone())))
        .collect();
    let ctx = ScoreContext::build(&bench.train, &TokenizerConfig::default(), Bm25Params::default(), stores).unwrap();
    let functions = vec![
        LabelingFunction::new("bm25", ScoreSource::Bm25),
        LabelingFunction::new("tfidf", ScoreSource::Tfidf),
        LabelingFunction::new("universal", ScoreSource::Embedding("universal".into())),
        LabelingFunction::new("bert", ScoreSource::Embedding("bert".into())),
    ];
    c.bench_function("label 200 queries x 20 candidates x 4 functions", |b| {
        b.iter(|| apply_labeling_functions(black_box(&bench.train), &functions, &ctx, LabelScheme::default()).unwrap())
    });
    c.bench_function("build lexical context, 4000 passages", |b| {
        b.iter(|| {
            ScoreContext::build(black_box(&bench.train), &TokenizerConfig::default(), Bm25Params::default(), HashMap::new())
                .unwrap()
        })
    });
}

fn label_model(c: &mut Criterion) {
    let matrix = sampled_matrix(10_000, 4, 1);
    let params = GenerativeParams::new(vec![0.8; 4], vec![0.6; 4], 0.1).unwrap();
    c.bench_function("label model log-likelihood, 10k x 4", |b| {
        b.iter(|| marginal_log_likelihood(black_box(&params), &matrix))
    });
    c.bench_function("label model fit, 10k x 4", |b| {
        b.iter(|| fit_generative_model(black_box(&matrix), 0.1, &FitOptions::default()).unwrap())
    });
}

fn scorer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 3 * 16 + 4;
    let opts = TrainOptions::default();
    let params = ScorerParams::init(dim, &opts.hidden_sizes, 1.0, 3).unwrap();
    let batch: Vec<TripletFeatures> = (0..opts.batch_size)
        .map(|_| TripletFeatures {
            pos: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            neg: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            confidence: 1.0,
        })
        .collect();
    c.bench_function("scorer gradient, batch 32, d = 52", |b| {
        b.iter(|| gradient(black_box(&params), &batch, &opts).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let gold: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.1)).collect();
    c.bench_function("auc, 10k pairs", |b| b.iter(|| auc(black_box(&scores), &gold).unwrap()));
    c.bench_function("average precision, 10k", |b| {
        b.iter_batched(|| gold.clone(), |g| average_precision(&g), BatchSize::SmallInput)
    });
}

criterion_group!(benches, labeling, label_model, scorer, metrics);
criterion_main!(benches);
