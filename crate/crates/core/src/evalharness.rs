//! Ranking metrics and retrieval evaluation against human or oracle scores.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::FittedPipeline;
use crate::retrieval::top_k_answers;
use crate::text::collapse_whitespace;

pub const MAX_SCORE: u32 = 10;

/// Relevance scores in system order, and the ideal order to compare with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredRanking {
    pub predicted: Vec<u32>,
    pub ideal: Vec<u32>,
}

impl ScoredRanking {
    /// Ideal order is the predicted multiset sorted descending.
    pub fn from_predicted(predicted: Vec<u32>) -> Self {
        let mut ideal = predicted.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        ScoredRanking { predicted, ideal }
    }
}

/// `Σ (2^rel − 1) / log2(i + 1)` over 1-based positions.
pub fn dcg(relevances: &[u32]) -> f64 {
    relevances
        .iter()
        .enumerate()
        .map(|(i, &r)| (2f64.powi(r as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the predicted order over DCG of the ideal order; 1 when nothing is
/// relevant.
pub fn ndcg(ranking: &ScoredRanking) -> Result<f64> {
    if ranking.predicted.is_empty() {
        return Err(Error::Metric("NDCG of an empty ranking".into()));
    }
    let ideal = dcg(&ranking.ideal);
    if ideal == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(&ranking.predicted) / ideal)
}

/// Mean of precision@k over the relevant positions; 0 with none relevant.
pub fn average_precision(relevance: &[u8]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevance.iter().enumerate() {
        if r == 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Mean average precision over binary relevance lists.
pub fn map_score(relevance_lists: &[Vec<u8>]) -> Result<f64> {
    if relevance_lists.is_empty() {
        return Err(Error::Metric("MAP over no queries".into()));
    }
    if relevance_lists.iter().flatten().any(|&r| r > 1) {
        return Err(Error::Metric("MAP relevance entries must be 0 or 1".into()));
    }
    let total: f64 = relevance_lists.iter().map(|l| average_precision(l)).sum();
    Ok(total / relevance_lists.len() as f64)
}

/// Cluster-level relevance: every returned answer of a query is relevant when
/// the query was mapped to its true cluster and irrelevant otherwise.
pub fn mapping_relevance_lists(truth: &[usize], predicted: &[usize], k: usize) -> Vec<Vec<u8>> {
    truth
        .iter()
        .zip(predicted)
        .map(|(t, p)| vec![u8::from(t == p); k])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredAnswer {
    pub answer: String,
    pub score: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub query: String,
    pub crop: Option<String>,
    pub scored_answers: Vec<ScoredAnswer>,
}

/// Reads one `ScoredQuery` per non-blank line.
pub fn read_scored_set(path: &Path) -> Result<Vec<ScoredQuery>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: ScoredQuery = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            line: n as u64 + 1,
            message: e.to_string(),
        })?;
        if let Some(bad) = q.scored_answers.iter().find(|a| a.score > MAX_SCORE) {
            return Err(Error::Ingest {
                line: n as u64 + 1,
                message: format!("score {} outside 0..={MAX_SCORE}", bad.score),
            });
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_scored_set<W: Write>(queries: &[ScoredQuery], mut out: W) -> Result<()> {
    for q in queries {
        let line = serde_json::to_string(q).map_err(|e| Error::Artifact(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Artifact(e.to_string()))?;
    }
    Ok(())
}

/// Ranking for one query: the ideal is the top `k` of the scored set by score
/// (stable in file order); predicted scores come from matching each returned
/// answer to an unused scored answer with the same text, 0 when unmatched.
pub fn score_returned(returned: &[String], scored: &[ScoredAnswer], k: usize) -> ScoredRanking {
    let norm = |s: &str| collapse_whitespace(s).to_lowercase();
    let mut used = vec![false; scored.len()];
    let predicted = returned
        .iter()
        .map(|a| {
            let a = norm(a);
            match (0..scored.len()).find(|&i| !used[i] && norm(&scored[i].answer) == a) {
                Some(i) => {
                    used[i] = true;
                    scored[i].score
                }
                None => 0,
            }
        })
        .collect();
    let mut ideal: Vec<u32> = scored.iter().map(|s| s.score).collect();
    ideal.sort_by(|a, b| b.cmp(a));
    ideal.truncate(k);
    ScoredRanking { predicted, ideal }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub k: usize,
    /// Empty when no query could be evaluated.
    pub mean_ndcg: Option<f64>,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
}

/// Mean NDCG per `k`. Queries with no scored answers, or that the pipeline
/// rejects, are skipped and counted.
pub fn evaluate_retrieval(pipeline: &FittedPipeline, scored: &[ScoredQuery], ks: &[usize]) -> Result<Vec<RetrievalRow>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be non-empty and >= 1".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut sum, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
        for q in scored {
            if q.scored_answers.is_empty() {
                skipped += 1;
                continue;
            }
            let ranked = match top_k_answers(&q.query, k, pipeline) {
                Ok(r) => r,
                Err(e) if e.is_data_error() => {
                    log::info!("skipping {:?}: {e}", q.query);
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let returned: Vec<String> = ranked.answers.into_iter().map(|a| a.answer).collect();
            let ranking = score_returned(&returned, &q.scored_answers, k);
            let value = if ranking.predicted.is_empty() {
                if ranking.ideal.iter().all(|&s| s == 0) { 1.0 } else { 0.0 }
            } else {
                ndcg(&ranking)?
            };
            sum += value;
            evaluated += 1;
        }
        rows.push(RetrievalRow {
            k,
            mean_ndcg: (evaluated > 0).then(|| sum / evaluated as f64),
            queries_evaluated: evaluated,
            queries_skipped: skipped,
        });
    }
    Ok(rows)
}

/// CSV with header `k,mean_ndcg,queries_evaluated,queries_skipped`.
pub fn write_retrieval_csv<W: Write>(rows: &[RetrievalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "mean_ndcg", "queries_evaluated", "queries_skipped"])
        .map_err(|e| Error::Artifact(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.mean_ndcg.map(|m| m.to_string()).unwrap_or_default(),
            r.queries_evaluated.to_string(),
            r.queries_skipped.to_string(),
        ])
        .map_err(|e| Error::Artifact(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Artifact(e.to_string()))
}
