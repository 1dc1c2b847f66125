use agriqrs::corpus::{preprocess_corpus, CorpusConfig, PreprocessedQuery};
use agriqrs::embed::{Embedder, EmbedderSpec, EmbeddingVector};
use agriqrs::par::Execution;
use agriqrs::simcluster::{query_similarity_matrix_with, threshold_cluster, ClusterParams};
use agriqrs::synth::{synthetic_corpus, SynthConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn inputs(n: usize) -> (Vec<PreprocessedQuery>, Vec<EmbeddingVector>) {
    let corpus = synthetic_corpus(&SynthConfig {
        n_queries: n,
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    let (queries, _) = preprocess_corpus(&corpus.records, &corpus.lexicon(), &CorpusConfig::default());
    let texts: Vec<String> = queries.iter().map(|q| q.text_contextual.clone()).collect();
    let vectors = Embedder::from_spec(&EmbedderSpec::default())
        .unwrap()
        .embed_batch(&texts)
        .unwrap()
        .iter()
        .map(EmbeddingVector::normalized)
        .collect();
    (queries, vectors)
}

fn similarity_and_clustering(c: &mut Criterion) {
    let params = ClusterParams::default();
    let modes = [
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel),
    ];

    let mut group = c.benchmark_group("cluster");
    group.sample_size(10);
    for n in [500, 1000, 2000] {
        let (queries, vectors) = inputs(n);
        for &(name, exec) in &modes {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| {
                    let sim = query_similarity_matrix_with(&queries, &vectors, &params, exec).unwrap();
                    threshold_cluster(&sim, params.thresh, params.min_size)
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, similarity_and_clustering);
criterion_main!(benches);
