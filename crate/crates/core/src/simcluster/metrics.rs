//! Internal cluster-quality indices over Euclidean distance.
//!
//! Items listed in `ClusterSet::dropped` are not scored.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::par::Execution;

use super::similarity::dedup_vectors;
use super::ClusterSet;

const BLOCK_ROWS: usize = 256;

/// Index value plus a flag set when a zero denominator forced an infinite
/// value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexScore {
    pub value: f64,
    pub degenerate: bool,
}

struct Scored<'a> {
    points: Vec<&'a [f64]>,
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

fn scored<'a>(vectors: &'a [EmbeddingVector], clusters: &ClusterSet) -> Result<Scored<'a>> {
    let non_empty: Vec<&Vec<usize>> = clusters.clusters.iter().filter(|c| !c.is_empty()).collect();
    if non_empty.len() < 2 {
        return Err(Error::Metric(format!(
            "need at least 2 clusters, got {}",
            non_empty.len()
        )));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut sizes = Vec::new();
    for (c, members) in non_empty.iter().enumerate() {
        sizes.push(members.len());
        for &m in members.iter() {
            let v = vectors.get(m).ok_or_else(|| {
                Error::Contract(format!("cluster member {m} has no vector"))
            })?;
            points.push(v.as_slice());
            labels.push(c);
        }
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Contract("metric over mixed dimensions".into()));
    }
    Ok(Scored {
        points,
        labels,
        sizes,
    })
}

fn centroids(s: &Scored) -> Vec<Vec<f64>> {
    let dim = s.points[0].len();
    let mut sums = vec![vec![0.0; dim]; s.sizes.len()];
    for (p, &l) in s.points.iter().zip(&s.labels) {
        for (acc, x) in sums[l].iter_mut().zip(p.iter()) {
            *acc += x;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(&s.sizes) {
        sum.iter_mut().for_each(|x| *x /= n as f64);
    }
    sums
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette `(b − a) / max(a, b)`; points in singleton clusters
/// contribute 0.
pub fn silhouette_score(vectors: &[EmbeddingVector], clusters: &ClusterSet) -> Result<f64> {
    silhouette_score_with(vectors, clusters, Execution::default())
}

pub fn silhouette_score_with(
    vectors: &[EmbeddingVector],
    clusters: &ClusterSet,
    exec: Execution,
) -> Result<f64> {
    let s = scored(vectors, clusters)?;
    let k = s.sizes.len();
    // Identical points share one distance row; per-cluster multiplicities
    // carry the weights.
    let owned: Vec<EmbeddingVector> = s.points.iter().map(|p| EmbeddingVector(p.to_vec())).collect();
    let (group, reps) = dedup_vectors(&owned);
    let u = reps.len();
    let mut multiplicity: Vec<Vec<(usize, usize)>> = vec![Vec::new(); u];
    for (i, &g) in group.iter().enumerate() {
        let l = s.labels[i];
        match multiplicity[g].iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => multiplicity[g].push((l, 1)),
        }
    }
    let dim = s.points[0].len();
    let mut unique = Array2::<f64>::zeros((u, dim));
    for (r, &i) in reps.iter().enumerate() {
        unique.row_mut(r).iter_mut().zip(s.points[i]).for_each(|(d, x)| *d = *x);
    }
    let sq_norms: Vec<f64> = unique.rows().into_iter().map(|r| r.dot(&r)).collect();
    let blocks = u.div_ceil(BLOCK_ROWS);
    // sums[g][c] = total distance from unique point g to members of cluster c
    let sums: Vec<Vec<f64>> = exec
        .map(blocks, |b| {
            let lo = b * BLOCK_ROWS;
            let hi = (lo + BLOCK_ROWS).min(u);
            let gram = unique.slice(s![lo..hi, ..]).dot(&unique.t());
            (lo..hi)
                .map(|g| {
                    let mut acc = vec![0.0; k];
                    for h in 0..u {
                        if h == g {
                            continue;
                        }
                        let d2 = sq_norms[g] + sq_norms[h] - 2.0 * gram[[g - lo, h]];
                        let d = d2.max(0.0).sqrt();
                        for &(c, n) in &multiplicity[h] {
                            acc[c] += n as f64 * d;
                        }
                    }
                    acc
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

    let total: f64 = (0..s.points.len())
        .map(|i| {
            let (g, own) = (group[i], s.labels[i]);
            if s.sizes[own] == 1 {
                return 0.0;
            }
            let a = sums[g][own] / (s.sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[g][c] / s.sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / s.points.len() as f64)
}

/// `(Tr(B) / Tr(W)) · (N − n) / (n − 1)`; infinite and flagged when every
/// cluster is a single coincident point set (`Tr(W) = 0`).
pub fn calinski_harabasz(vectors: &[EmbeddingVector], clusters: &ClusterSet) -> Result<IndexScore> {
    let s = scored(vectors, clusters)?;
    let (big_n, n) = (s.points.len(), s.sizes.len());
    if big_n <= n {
        return Err(Error::Metric(format!(
            "Calinski-Harabasz needs more points ({big_n}) than clusters ({n})"
        )));
    }
    let cents = centroids(&s);
    let dim = s.points[0].len();
    let mut overall = vec![0.0; dim];
    for p in &s.points {
        overall.iter_mut().zip(p.iter()).for_each(|(o, x)| *o += x);
    }
    overall.iter_mut().for_each(|o| *o /= big_n as f64);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let trace_b: f64 = cents
        .iter()
        .zip(&s.sizes)
        .map(|(c, &m)| m as f64 * sq(c, &overall))
        .sum();
    let trace_w: f64 = s
        .points
        .iter()
        .zip(&s.labels)
        .map(|(p, &l)| sq(p, &cents[l]))
        .sum();
    if trace_w == 0.0 {
        return Ok(IndexScore {
            value: f64::INFINITY,
            degenerate: true,
        });
    }
    Ok(IndexScore {
        value: trace_b / trace_w * (big_n - n) as f64 / (n - 1) as f64,
        degenerate: false,
    })
}

/// Mean over clusters of the worst `(s_i + s_j) / d(c_i, c_j)`. Coincident
/// centroids make that term infinite and set the flag.
pub fn davies_bouldin(vectors: &[EmbeddingVector], clusters: &ClusterSet) -> Result<IndexScore> {
    let s = scored(vectors, clusters)?;
    let cents = centroids(&s);
    let n = cents.len();
    let mut spread = vec![0.0; n];
    for (p, &l) in s.points.iter().zip(&s.labels) {
        spread[l] += dist(p, &cents[l]);
    }
    spread.iter_mut().zip(&s.sizes).for_each(|(x, &m)| *x /= m as f64);
    let mut degenerate = false;
    let mut total = 0.0;
    for i in 0..n {
        let mut worst = 0.0f64;
        for j in (0..n).filter(|&j| j != i) {
            let d = dist(&cents[i], &cents[j]);
            let term = if d == 0.0 {
                degenerate = true;
                f64::INFINITY
            } else {
                (spread[i] + spread[j]) / d
            };
            worst = worst.max(term);
        }
        total += worst;
    }
    Ok(IndexScore {
        value: total / n as f64,
        degenerate,
    })
}

/// The three indices together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub silhouette: f64,
    pub calinski_harabasz: IndexScore,
    pub davies_bouldin: IndexScore,
}

pub fn cluster_quality(
    vectors: &[EmbeddingVector],
    clusters: &ClusterSet,
    exec: Execution,
) -> Result<ClusterQuality> {
    Ok(ClusterQuality {
        silhouette: silhouette_score_with(vectors, clusters, exec)?,
        calinski_harabasz: calinski_harabasz(vectors, clusters)?,
        davies_bouldin: davies_bouldin(vectors, clusters)?,
    })
}
