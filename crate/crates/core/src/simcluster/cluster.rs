use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SimilarityMatrix;

/// Knobs of the hybrid similarity and the threshold clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Weight of embedding cosine against token Jaccard.
    pub lambda: f64,
    pub thresh: f64,
    pub min_size: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            lambda: 0.8,
            thresh: 0.95,
            min_size: 2,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.thresh) {
            return Err(Error::Config(format!("thresh {} outside [0, 1]", self.thresh)));
        }
        if self.min_size == 0 {
            return Err(Error::Config("min_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered clusters of item indices plus the items removed by the size rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    pub dropped: Vec<usize>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// Cluster id per item (`None` for dropped items) over `0..n`.
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut labels = vec![None; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &m in members {
                labels[m] = Some(c);
            }
        }
        labels
    }

    /// Builds a cluster set from one label per item; clusters are ordered by
    /// their smallest member.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
        clusters.sort_by_key(|c| c[0]);
        ClusterSet {
            clusters,
            dropped: Vec::new(),
        }
    }

    /// Checks that clusters and dropped items partition `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.clusters.iter().flatten().chain(&self.dropped) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Single-pass threshold clustering.
///
/// Items are visited in index order. Each unvisited item seeds a cluster and
/// claims every later unvisited item whose similarity to the seed is at least
/// `thresh`. Clusters smaller than `min_size` are moved to `dropped`.
pub fn threshold_cluster(sim: &SimilarityMatrix, thresh: f64, min_size: usize) -> ClusterSet {
    let n = sim.n();
    let thresh = thresh as f32;
    let mut visited = vec![false; n];
    let mut out = ClusterSet::default();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut members = vec![seed];
        for (offset, &score) in sim.upper_row(seed).iter().enumerate() {
            let j = seed + 1 + offset;
            if !visited[j] && score >= thresh {
                visited[j] = true;
                members.push(j);
            }
        }
        if members.len() >= min_size {
            out.clusters.push(members);
        } else {
            out.dropped.extend(members);
        }
    }
    out.dropped.sort_unstable();
    out
}
