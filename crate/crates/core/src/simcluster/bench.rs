use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{preprocess_corpus, CorpusConfig};
use crate::embed::{hashed_embedding, EmbeddingVector};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::synth::{synthetic_corpus, SynthConfig};

use super::{
    cluster_quality, kmeans_size_matched, query_similarity_matrix_with, threshold_cluster,
    ClusterParams, ClusterSet,
};

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Each timing is the minimum over this many runs.
    pub repetitions: usize,
    pub with_metrics: bool,
    pub dimension: usize,
    pub kmeans_max_iter: usize,
    pub exec: Execution,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 1,
            with_metrics: true,
            dimension: 768,
            kmeans_max_iter: 100,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub n: usize,
    pub seconds: f64,
    pub silhouette: Option<f64>,
    pub ch_index: Option<f64>,
    pub db_index: Option<f64>,
}

fn timed<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let value = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        out = Some(value);
    }
    Ok((out.expect("at least one run"), best))
}

fn row(method: &'static str, n: usize, seconds: f64, vectors: &[EmbeddingVector], c: &ClusterSet, opts: &BenchOptions) -> BenchRow {
    let quality = if opts.with_metrics {
        cluster_quality(vectors, c, opts.exec).ok()
    } else {
        None
    };
    BenchRow {
        method,
        n,
        seconds,
        silhouette: quality.map(|q| q.silhouette),
        ch_index: quality.map(|q| q.calinski_harabasz.value),
        db_index: quality.map(|q| q.davies_bouldin.value),
    }
}

/// Times threshold clustering (similarity matrix plus the clustering pass,
/// embedding excluded) and a size-matched K-Means on synthetic corpora of each
/// size. Emits a `threshold` and a `kmeans` row per size; metrics are left
/// empty when fewer than two clusters formed.
pub fn benchmark_clustering(
    sizes: &[usize],
    params: &ClusterParams,
    seed: u64,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    params.validate()?;
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("benchmark sizes must be ascending".into()));
    }
    let config = CorpusConfig::default();
    let mut rows = Vec::with_capacity(2 * sizes.len());
    for &n in sizes {
        let corpus = synthetic_corpus(&SynthConfig {
            n_queries: n,
            seed,
            ..Default::default()
        })?;
        let lexicon = corpus.lexicon();
        let (queries, _) = preprocess_corpus(&corpus.records, &lexicon, &config);
        let vectors: Vec<EmbeddingVector> = queries
            .iter()
            .map(|q| hashed_embedding(&q.text_contextual, opts.dimension, seed))
            .collect();

        let (clusters, secs) = timed(opts.repetitions, || {
            let sim = query_similarity_matrix_with(&queries, &vectors, params, opts.exec)?;
            Ok(threshold_cluster(&sim, params.thresh, params.min_size))
        })?;
        rows.push(row("threshold", n, secs, &vectors, &clusters, opts));

        let (km, secs) = if clusters.is_empty() {
            (ClusterSet::default(), 0.0)
        } else {
            timed(opts.repetitions, || {
                kmeans_size_matched(&vectors, &clusters, seed, opts.kmeans_max_iter, opts.exec)
            })?
        };
        rows.push(row("kmeans", n, secs, &vectors, &km, opts));
    }
    Ok(rows)
}

/// CSV with header `method,n,seconds,silhouette,ch_index,db_index`.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Artifact(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["method", "n", "seconds", "silhouette", "ch_index", "db_index"])
            .map_err(|e| Error::Artifact(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Artifact(e.to_string()))
}
