use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::corpus::PreprocessedQuery;
use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::par::Execution;

use super::ClusterParams;

/// Rows per gemm block when building cosine tables.
const BLOCK_ROWS: usize = 256;

/// Symmetric pairwise score matrix with unit diagonal and entries in [0, 1].
///
/// Only the strict upper triangle is stored, packed row by row, as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    upper: Vec<f32>,
}

fn row_start(n: usize, i: usize) -> usize {
    i * n - i * (i + 1) / 2
}

impl SimilarityMatrix {
    /// Builds a matrix from `f(i, j)` evaluated for `i < j`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(f(i, j));
            }
        }
        Self::from_upper(n, upper)
    }

    pub(crate) fn from_upper(n: usize, upper: Vec<f32>) -> Result<Self> {
        if let Some(bad) = upper.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!(
                "similarity entry {bad} outside [0, 1]"
            )));
        }
        Ok(SimilarityMatrix { n, upper })
    }

    /// Validates and packs a dense square matrix.
    pub fn from_dense(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Contract(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row[i] != 1.0 {
                return Err(Error::Contract(format!("diagonal entry {i} is {}", row[i])));
            }
            for j in i + 1..n {
                if row[j] != rows[j][i] {
                    return Err(Error::Contract(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Self::from_fn(n, |i, j| rows[i][j])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => self.upper[row_start(self.n, i) + (j - i - 1)],
            std::cmp::Ordering::Greater => self.get(j, i),
        }
    }

    /// Entries `(i, j)` for `j = i + 1 .. n`.
    pub fn upper_row(&self, i: usize) -> &[f32] {
        let start = row_start(self.n, i);
        &self.upper[start..start + (self.n - i - 1)]
    }

    pub fn to_dense(&self) -> Vec<Vec<f32>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Debug dump: `n`, `n` as u32 LE, then the full matrix row-major as f32 LE.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = u32::try_from(self.n).map_err(std::io::Error::other)?;
        out.write_all(&n.to_le_bytes())?;
        out.write_all(&n.to_le_bytes())?;
        let mut row = Vec::with_capacity(self.n * 4);
        for i in 0..self.n {
            row.clear();
            for j in 0..self.n {
                row.extend_from_slice(&self.get(i, j).to_le_bytes());
            }
            out.write_all(&row)?;
        }
        Ok(())
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_dump(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Artifact(e.to_string()))?;
        if bytes.len() < 8 {
            return Err(Error::Artifact("similarity dump shorter than header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (rows, cols) = (word(0), word(4));
        if rows != cols || bytes.len() != 8 + rows * cols * 4 {
            return Err(Error::Artifact(format!(
                "bad similarity dump: header {rows}x{cols}, {} bytes",
                bytes.len()
            )));
        }
        let dense: Vec<Vec<f32>> = (0..rows)
            .map(|i| {
                (0..cols)
                    .map(|j| {
                        let at = 8 + (i * cols + j) * 4;
                        f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
                    })
                    .collect()
            })
            .collect();
        Self::from_dense(&dense)
    }
}

/// |a ∩ b| / |a ∪ b|; two empty sets are identical and score 1.
pub fn jaccard_similarity<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Jaccard over sorted, deduplicated id lists.
pub(crate) fn jaccard_sorted(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Interns token lists into sorted id sets, deduplicating identical sets.
/// Returns (set id per item, distinct sets).
pub(crate) fn intern_token_sets<T, S>(items: &[T]) -> (Vec<usize>, Vec<Vec<u32>>)
where
    T: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut vocab: HashMap<&str, u32> = HashMap::new();
    let mut set_ids: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut sets = Vec::new();
    let mut ids = Vec::with_capacity(items.len());
    for tokens in items {
        let mut set: Vec<u32> = tokens
            .as_ref()
            .iter()
            .map(|t| {
                let next = vocab.len() as u32;
                *vocab.entry(t.as_ref()).or_insert(next)
            })
            .collect();
        set.sort_unstable();
        set.dedup();
        let id = *set_ids.entry(set.clone()).or_insert_with(|| {
            sets.push(set);
            sets.len() - 1
        });
        ids.push(id);
    }
    (ids, sets)
}

/// Groups bitwise-identical vectors. Returns (group per item, representatives).
pub(crate) fn dedup_vectors(vectors: &[EmbeddingVector]) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let groups = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let key: Vec<u64> = v.as_slice().iter().map(|x| x.to_bits()).collect();
            *seen.entry(key).or_insert_with(|| {
                reps.push(i);
                reps.len() - 1
            })
        })
        .collect();
    (groups, reps)
}

/// Clamped cosine table over the given vectors, computed blockwise in f32.
/// Identical nonzero vectors score exactly 1; zero vectors score 0.
pub(crate) fn cosine_table(vectors: &[&EmbeddingVector], exec: Execution) -> Array2<f32> {
    let u = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.dim());
    let mut unit = Array2::<f32>::zeros((u, dim));
    let mut nonzero = vec![false; u];
    for (r, v) in vectors.iter().enumerate() {
        let n = v.norm();
        if n > 0.0 {
            nonzero[r] = true;
            for (dst, x) in unit.row_mut(r).iter_mut().zip(v.as_slice()) {
                *dst = (x / n) as f32;
            }
        }
    }
    let blocks = u.div_ceil(BLOCK_ROWS);
    let unit_t: ArrayView2<f32> = unit.t();
    let parts = exec.map(blocks, |b| {
        let lo = b * BLOCK_ROWS;
        let hi = (lo + BLOCK_ROWS).min(u);
        unit.slice(s![lo..hi, ..]).dot(&unit_t)
    });
    let mut table = Array2::<f32>::zeros((u, u));
    for (b, part) in parts.into_iter().enumerate() {
        let lo = b * BLOCK_ROWS;
        table.slice_mut(s![lo..lo + part.nrows(), ..]).assign(&part);
    }
    table.mapv_inplace(|c| c.clamp(0.0, 1.0));
    for r in 0..u {
        table[[r, r]] = if nonzero[r] { 1.0 } else { 0.0 };
    }
    table
}

/// Fills a packed upper triangle row by row.
pub(crate) fn fill_upper(
    n: usize,
    exec: Execution,
    entry: impl Fn(usize, usize) -> f32 + Sync + Send,
) -> Vec<f32> {
    let mut upper = vec![0f32; n * n.saturating_sub(1) / 2];
    let mut rows: Vec<&mut [f32]> = Vec::with_capacity(n);
    let mut rest: &mut [f32] = &mut upper;
    for i in 0..n {
        let (row, tail) = rest.split_at_mut(n - i - 1);
        rows.push(row);
        rest = tail;
    }
    exec.for_each_mut(&mut rows, |i, row| {
        for (off, slot) in row.iter_mut().enumerate() {
            *slot = entry(i, i + 1 + off);
        }
    });
    upper
}

/// Hybrid query similarity: `λ·max(cos, 0) + (1 − λ)·jaccard`, unit diagonal.
pub fn query_similarity_matrix(
    queries: &[PreprocessedQuery],
    embeddings: &[EmbeddingVector],
    params: &ClusterParams,
) -> Result<SimilarityMatrix> {
    query_similarity_matrix_with(queries, embeddings, params, Execution::default())
}

pub fn query_similarity_matrix_with(
    queries: &[PreprocessedQuery],
    embeddings: &[EmbeddingVector],
    params: &ClusterParams,
    exec: Execution,
) -> Result<SimilarityMatrix> {
    params.validate()?;
    if queries.len() != embeddings.len() {
        return Err(Error::Contract(format!(
            "{} queries but {} embeddings",
            queries.len(),
            embeddings.len()
        )));
    }
    if let Some(first) = embeddings.first() {
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != first.dim()) {
            return Err(Error::Contract(format!(
                "mixed embedding dimensions {} and {}",
                first.dim(),
                bad.dim()
            )));
        }
    }
    let n = queries.len();
    let (vec_group, reps) = dedup_vectors(embeddings);
    let rep_refs: Vec<&EmbeddingVector> = reps.iter().map(|&i| &embeddings[i]).collect();
    let cosines = cosine_table(&rep_refs, exec);
    let token_lists: Vec<&Vec<String>> = queries.iter().map(|q| &q.tokens_lexical).collect();
    let (set_id, sets) = intern_token_sets(&token_lists);
    let lambda = params.lambda;
    let upper = fill_upper(n, exec, |i, j| {
        let cos = f64::from(cosines[[vec_group[i], vec_group[j]]]);
        let jac = if set_id[i] == set_id[j] {
            1.0
        } else {
            jaccard_sorted(&sets[set_id[i]], &sets[set_id[j]])
        };
        ((lambda * cos + (1.0 - lambda) * jac) as f32).clamp(0.0, 1.0)
    });
    Ok(SimilarityMatrix { n, upper })
}
