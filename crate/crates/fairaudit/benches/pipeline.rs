//! Benchmarks comparing the data-parallel feature pipeline against its
//! sequential fallback. Run `cargo bench --no-default-features` to time the
//! whole build without rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fairaudit::consensus::ward_cluster;
use fairaudit::features::{fit_vocabulary, transform, transform_seq};

const LEXICON: [&str; 30] = [
    "archive", "branch", "bulletin", "catalog", "circulation", "citation", "collection",
    "database", "digital", "directory", "document", "edition", "entry", "exhibit", "folio",
    "gateway", "guide", "holdings", "index", "journal", "lending", "listing", "manuscript",
    "microfilm", "newsletter", "notation", "overview", "periodical", "preservation", "record",
];

fn synthetic_docs(n_docs: usize, words_per_doc: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| {
            (0..words_per_doc)
                .map(|_| LEXICON[rng.gen_range(0..LEXICON.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn bench_transform(c: &mut Criterion) {
    let mut group = c.benchmark_group("tfidf_transform");
    for &n_docs in &[200usize, 1000] {
        let docs = synthetic_docs(n_docs, 120, 7);
        let vocab = fit_vocabulary(&docs, 30);
        group.bench_with_input(BenchmarkId::new("parallel", n_docs), &docs, |b, docs| {
            b.iter(|| transform(docs, &vocab))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n_docs), &docs, |b, docs| {
            b.iter(|| transform_seq(docs, &vocab))
        });
    }
    group.finish();
}

fn bench_clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    c.bench_function("ward_cluster_60", |b| b.iter(|| ward_cluster(&rows)));
}

criterion_group!(benches, bench_transform, bench_clustering);
criterion_main!(benches);
