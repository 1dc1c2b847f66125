use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ndarray::{s, Array2};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::par::Execution;

use super::similarity::dedup_vectors;
use super::ClusterSet;

const BLOCK_ROWS: usize = 256;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted k-means++ seeding over distinct points.
fn init_plus_plus(
    points: &Array2<f64>,
    weights: &[f64],
    first: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let u = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(first));
    let row = |i: usize| points.row(i).to_slice().expect("standard layout").to_vec();
    let first_row = row(first);
    let mut d2: Vec<f64> = (0..u).map(|i| sq_dist(&row(i), &first_row)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().zip(weights).map(|(d, w)| d * w).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = u - 1;
            for (i, (d, w)) in d2.iter().zip(weights).enumerate() {
                let mass = d * w;
                if mass > 0.0 && target < mass {
                    chosen = i;
                    break;
                }
                target -= mass;
            }
            chosen
        } else {
            rng.random_range(0..u)
        };
        let chosen = row(pick);
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(&row(i), &chosen));
        }
    }
    centroids
}

/// Nearest centroid and squared distance per point, lowest index on ties.
fn assign(points: &Array2<f64>, norms: &[f64], centroids: &Array2<f64>, exec: Execution) -> Vec<(usize, f64)> {
    let c_norms: Vec<f64> = centroids.rows().into_iter().map(|r| r.dot(&r)).collect();
    let u = points.nrows();
    exec.map(u.div_ceil(BLOCK_ROWS), |b| {
        let lo = b * BLOCK_ROWS;
        let hi = (lo + BLOCK_ROWS).min(u);
        let cross = points.slice(s![lo..hi, ..]).dot(&centroids.t());
        (lo..hi)
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (c, &cn) in c_norms.iter().enumerate() {
                    let d = (norms[i] + cn - 2.0 * cross[[i - lo, c]]).max(0.0);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Lloyd's k-means with Euclidean distance and k-means++ seeding.
///
/// Identical points are merged and weighted, so they always share a label.
/// A cluster that empties is reseeded with the point farthest from its
/// current centroid. Clusters still empty at the end are omitted.
pub fn kmeans_baseline(
    vectors: &[EmbeddingVector],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterSet> {
    kmeans_baseline_with(vectors, k, seed, max_iter, Execution::default())
}

pub fn kmeans_baseline_with(
    vectors: &[EmbeddingVector],
    k: usize,
    seed: u64,
    max_iter: usize,
    exec: Execution,
) -> Result<ClusterSet> {
    if k == 0 {
        return Err(Error::Contract("k-means needs k >= 1".into()));
    }
    if k > vectors.len() {
        return Err(Error::Contract(format!(
            "k = {k} exceeds {} points",
            vectors.len()
        )));
    }
    if max_iter == 0 {
        return Err(Error::Contract("k-means needs max_iter >= 1".into()));
    }
    let dim = vectors[0].dim();
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(Error::Contract("k-means over mixed dimensions".into()));
    }
    let (group, reps) = dedup_vectors(vectors);
    let u = reps.len();
    let mut weights = vec![0.0; u];
    for &g in &group {
        weights[g] += 1.0;
    }
    let mut points = Array2::<f64>::zeros((u, dim));
    for (r, &i) in reps.iter().enumerate() {
        points.row_mut(r).iter_mut().zip(vectors[i].as_slice()).for_each(|(d, x)| *d = *x);
    }
    let norms: Vec<f64> = points.rows().into_iter().map(|r| r.dot(&r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = group[rng.random_range(0..vectors.len())];
    let mut centroids = init_plus_plus(&points, &weights, first, k, &mut rng);
    let mut labels = vec![usize::MAX; u];

    for _ in 0..max_iter {
        let assigned = assign(&points, &norms, &centroids, exec);
        let changed = assigned.iter().zip(&labels).any(|((c, _), old)| c != old);
        labels = assigned.iter().map(|(c, _)| *c).collect();

        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut mass = vec![0.0; k];
        for (g, &l) in labels.iter().enumerate() {
            mass[l] += weights[g];
            sums.row_mut(l).scaled_add(weights[g], &points.row(g));
        }
        let mut dist: Vec<f64> = assigned.iter().map(|(_, d)| *d).collect();
        let mut reseeded = false;
        for c in 0..k {
            if mass[c] > 0.0 {
                continue;
            }
            let far = (0..u)
                .filter(|&g| mass[labels[g]] > weights[g])
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            let Some(far) = far.filter(|&g| dist[g] > 0.0) else {
                continue;
            };
            let old = labels[far];
            mass[old] -= weights[far];
            sums.row_mut(old).scaled_add(-weights[far], &points.row(far));
            labels[far] = c;
            mass[c] = weights[far];
            sums.row_mut(c).assign(&(&points.row(far) * weights[far]));
            dist[far] = 0.0;
            reseeded = true;
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                let mean = &sums.row(c) / mass[c];
                centroids.row_mut(c).assign(&mean);
            }
        }
        if !changed && !reseeded {
            break;
        }
    }
    let item_labels: Vec<usize> = group.iter().map(|&g| labels[g]).collect();
    Ok(ClusterSet::from_labels(&item_labels))
}

/// K-Means over the items the threshold clustering kept, with k equal to its
/// cluster count. Indices in the result refer to the full `vectors` slice and
/// the threshold run's dropped items are carried over.
pub fn kmeans_size_matched(
    vectors: &[EmbeddingVector],
    reference: &ClusterSet,
    seed: u64,
    max_iter: usize,
    exec: Execution,
) -> Result<ClusterSet> {
    let kept: Vec<usize> = {
        let mut k: Vec<usize> = reference.clusters.iter().flatten().copied().collect();
        k.sort_unstable();
        k
    };
    let subset: Vec<EmbeddingVector> = kept
        .iter()
        .map(|&i| {
            vectors
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("cluster member {i} has no vector")))
        })
        .collect::<Result<_>>()?;
    let local = kmeans_baseline_with(&subset, reference.len(), seed, max_iter, exec)?;
    Ok(ClusterSet {
        clusters: local
            .clusters
            .into_iter()
            .map(|c| c.into_iter().map(|i| kept[i]).collect())
            .collect(),
        dropped: reference.dropped.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(per: usize, sep: f64, seed: u64) -> (Vec<EmbeddingVector>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (label, center) in [[0.0, 0.0, 0.0], [sep, 0.0, 0.0]].iter().enumerate() {
            for _ in 0..per {
                pts.push(EmbeddingVector(
                    center.iter().map(|c| c + noise.sample(&mut rng)).collect(),
                ));
                truth.push(label);
            }
        }
        (pts, truth)
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts: Vec<_> = (0..6)
            .map(|i| EmbeddingVector(vec![i as f64, (i * i) as f64]))
            .collect();
        let c = kmeans_baseline(&pts, 6, 3, 20).unwrap();
        assert_eq!(c.clusters, (0..6).map(|i| vec![i]).collect::<Vec<_>>());
    }

    #[test]
    fn separated_blobs_recovered() {
        // centers 8σ apart: no sample of 100 crosses the midpoint
        let (pts, truth) = blobs(50, 8.0, 17);
        let c = kmeans_baseline(&pts, 2, 1, 100).unwrap();
        assert_eq!(c, ClusterSet::from_labels(&truth));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (pts, _) = blobs(40, 3.0, 5);
        let a = kmeans_baseline(&pts, 3, 42, 50).unwrap();
        let b = kmeans_baseline(&pts, 3, 42, 50).unwrap();
        assert_eq!(a, b);
        let seq = kmeans_baseline_with(&pts, 3, 42, 50, Execution::Sequential).unwrap();
        assert_eq!(a, seq);
    }

    #[test]
    fn contract_errors() {
        let pts = vec![EmbeddingVector(vec![0.0]); 3];
        assert!(matches!(kmeans_baseline(&pts, 0, 0, 10), Err(Error::Contract(_))));
        assert!(matches!(kmeans_baseline(&pts, 4, 0, 10), Err(Error::Contract(_))));
        assert!(matches!(kmeans_baseline(&pts, 2, 0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn size_matched_maps_back_to_full_indices() {
        let (pts, _) = blobs(10, 8.0, 2);
        let reference = ClusterSet {
            clusters: vec![(0..5).collect(), (10..15).collect()],
            dropped: vec![5, 6, 7, 8, 9, 15, 16, 17, 18, 19],
        };
        let c = kmeans_size_matched(&pts, &reference, 0, 50, Execution::Sequential).unwrap();
        assert_eq!(c.clusters, reference.clusters);
        assert_eq!(c.dropped, reference.dropped);
    }

    #[test]
    fn duplicate_points_do_not_panic() {
        let pts = vec![EmbeddingVector(vec![1.0, 1.0]); 5];
        let c = kmeans_baseline(&pts, 3, 0, 10).unwrap();
        assert!(c.is_partition_of(5));
        assert_eq!(c.len(), 1);
    }
}
