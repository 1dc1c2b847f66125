//! Hybrid query similarity, threshold clustering, a K-Means baseline and
//! cluster-quality indices.

mod bench;
mod cluster;
mod kmeans;
mod metrics;
mod similarity;

pub use bench::{benchmark_clustering, write_bench_csv, BenchOptions, BenchRow};
pub use cluster::{threshold_cluster, ClusterParams, ClusterSet};
pub use kmeans::{kmeans_baseline, kmeans_baseline_with, kmeans_size_matched};
pub use metrics::{
    calinski_harabasz, cluster_quality, davies_bouldin, silhouette_score, silhouette_score_with,
    ClusterQuality, IndexScore,
};
pub use similarity::{
    jaccard_similarity, query_similarity_matrix, query_similarity_matrix_with, SimilarityMatrix,
};
pub(crate) use similarity::{fill_upper, intern_token_sets, jaccard_sorted};
