//! Answer retrieval for a mapped query cluster: crop filtering, near-duplicate
//! answer clustering, size ranking and leader election.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{CallRecord, DropReason};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::pipeline::FittedPipeline;
use crate::simcluster::{fill_upper, intern_token_sets, jaccard_sorted, threshold_cluster, ClusterSet, SimilarityMatrix};
use crate::text;

/// Unit of the character-set half of the answer similarity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharUnit {
    #[default]
    Unigram,
    Bigram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub answer_thresh: f64,
    pub answer_min_size: usize,
    pub char_unit: CharUnit,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            answer_thresh: 0.6,
            answer_min_size: 1,
            char_unit: CharUnit::Unigram,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.answer_thresh) {
            return Err(Error::Config(format!(
                "answer_thresh {} outside [0, 1]",
                self.answer_thresh
            )));
        }
        if self.answer_min_size == 0 {
            return Err(Error::Config("answer_min_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One answer of the mapped cluster with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub record_index: usize,
    pub crop: String,
    pub source_query: String,
    pub answer: String,
}

impl From<&CallRecord> for Candidate {
    fn from(r: &CallRecord) -> Self {
        Candidate {
            record_index: r.index,
            crop: r.crop.clone(),
            source_query: r.query_raw.clone(),
            answer: r.answer_raw.clone(),
        }
    }
}

/// Keeps records whose crop field or answer text contains `crop` on token
/// boundaries. `None` signals that a crop was given and nothing survived.
pub fn select_candidates(records: &[&CallRecord], crop: Option<&str>) -> Option<Vec<Candidate>> {
    let Some(crop) = crop else {
        return Some(records.iter().map(|r| Candidate::from(*r)).collect());
    };
    let kept: Vec<Candidate> = records
        .iter()
        .filter(|r| text::text_contains_phrase(&r.crop, crop) || text::text_contains_phrase(&r.answer_raw, crop))
        .map(|r| Candidate::from(*r))
        .collect();
    (!kept.is_empty()).then_some(kept)
}

/// Candidates after the crop filter, falling back to the whole cluster when
/// the filter empties it. The flag reports the fallback.
pub fn candidates_with_fallback(records: &[&CallRecord], crop: Option<&str>) -> (Vec<Candidate>, bool) {
    match select_candidates(records, crop) {
        Some(c) => (c, false),
        None => (select_candidates(records, None).unwrap_or_default(), true),
    }
}

fn char_set(answer: &str, unit: CharUnit) -> Vec<u32> {
    let lower = answer.to_lowercase();
    let mut set: Vec<u32> = match unit {
        CharUnit::Unigram => lower.chars().filter(|c| !c.is_whitespace()).map(u32::from).collect(),
        CharUnit::Bigram => lower
            .split_whitespace()
            .flat_map(|w| {
                let chars: Vec<char> = w.chars().collect();
                if chars.len() == 1 {
                    vec![u32::from(chars[0])]
                } else {
                    chars
                        .windows(2)
                        .map(|p| (u32::from(p[0]) << 21 | u32::from(p[1])) | 1 << 31)
                        .collect()
                }
            })
            .collect(),
    };
    set.sort_unstable();
    set.dedup();
    set
}

/// Mean of character-set Jaccard and token-set Jaccard.
pub fn answer_similarity(a1: &str, a2: &str) -> f64 {
    answer_similarity_with(a1, a2, CharUnit::Unigram)
}

pub fn answer_similarity_with(a1: &str, a2: &str, unit: CharUnit) -> f64 {
    let (ids, sets) = intern_token_sets(&[text::tokenize(a1), text::tokenize(a2)]);
    let chars = jaccard_sorted(&char_set(a1, unit), &char_set(a2, unit));
    (chars + jaccard_sorted(&sets[ids[0]], &sets[ids[1]])) / 2.0
}

/// Answer similarity matrix over the candidates, then threshold clustering.
pub fn cluster_answers(candidates: &[String], thresh: f64, min_size: usize) -> ClusterSet {
    cluster_answers_with(candidates, thresh, min_size, CharUnit::Unigram, Execution::Sequential)
}

pub fn cluster_answers_with(
    candidates: &[String],
    thresh: f64,
    min_size: usize,
    unit: CharUnit,
    exec: Execution,
) -> ClusterSet {
    let tokens: Vec<Vec<String>> = candidates.iter().map(|a| text::tokenize(a)).collect();
    let (tok_id, tok_sets) = intern_token_sets(&tokens);
    let chars: Vec<Vec<u32>> = candidates.iter().map(|a| char_set(a, unit)).collect();
    let n = candidates.len();
    let upper = fill_upper(n, exec, |i, j| {
        let c = jaccard_sorted(&chars[i], &chars[j]);
        let t = jaccard_sorted(&tok_sets[tok_id[i]], &tok_sets[tok_id[j]]);
        ((c + t) / 2.0) as f32
    });
    let sim = SimilarityMatrix::from_upper(n, upper).expect("answer similarity lies in [0, 1]");
    threshold_cluster(&sim, thresh, min_size)
}

/// Cluster positions ordered by descending size; ties keep the earliest
/// minimum member, then the earliest seed.
pub fn rank_clusters(clusters: &ClusterSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    let key = |c: usize| {
        let members = &clusters.clusters[c];
        (
            std::cmp::Reverse(members.len()),
            members.iter().min().copied().unwrap_or(usize::MAX),
            members.first().copied().unwrap_or(usize::MAX),
        )
    };
    order.sort_by_key(|&c| key(c));
    order
}

/// Member with the most unique non-stopword tokens; ties go to the longer
/// text, then to the lower index.
pub fn elect_leader(members: &[&str], stopwords: &BTreeSet<String>) -> usize {
    let score = |text: &str| {
        let keywords: BTreeSet<String> = text::tokenize(text)
            .into_iter()
            .filter(|t| !stopwords.contains(t))
            .collect();
        (keywords.len(), text.chars().count())
    };
    let mut best = 0;
    let mut best_score = score(members[0]);
    for (i, m) in members.iter().enumerate().skip(1) {
        let s = score(m);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCluster {
    /// Positions in the candidate list.
    pub member_indices: Vec<usize>,
    pub leader_index: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub crop: String,
    pub source_query: String,
    pub answer: String,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedAnswers {
    pub query: String,
    pub crop: Option<String>,
    pub cluster_id: usize,
    pub fallback_unfiltered: bool,
    pub answers: Vec<RankedEntry>,
    #[serde(skip)]
    pub k_requested: usize,
}

impl RankedAnswers {
    pub fn k_returned(&self) -> usize {
        self.answers.len()
    }
}

/// Clusters the candidates, ranks the clusters and returns up to `k`
/// leaders in rank order.
pub fn rank_answers(
    candidates: &[Candidate],
    k: usize,
    params: &RetrievalParams,
    stopwords: &BTreeSet<String>,
) -> (Vec<AnswerCluster>, Vec<RankedEntry>) {
    let texts: Vec<String> = candidates.iter().map(|c| c.answer.clone()).collect();
    let clusters = cluster_answers_with(
        &texts,
        params.answer_thresh,
        params.answer_min_size,
        params.char_unit,
        Execution::Sequential,
    );
    let ranked: Vec<AnswerCluster> = rank_clusters(&clusters)
        .into_iter()
        .map(|c| {
            let members = clusters.clusters[c].clone();
            let member_texts: Vec<&str> = members.iter().map(|&m| texts[m].as_str()).collect();
            let leader = members[elect_leader(&member_texts, stopwords)];
            AnswerCluster {
                size: members.len(),
                member_indices: members,
                leader_index: leader,
            }
        })
        .collect();
    let entries = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, c)| {
            let cand = &candidates[c.leader_index];
            RankedEntry {
                rank: r + 1,
                crop: cand.crop.clone(),
                source_query: cand.source_query.clone(),
                answer: cand.answer.clone(),
                cluster_size: c.size,
            }
        })
        .collect();
    (ranked, entries)
}

/// Full answer path for a user query against a fitted pipeline.
pub fn top_k_answers(user_query: &str, k: usize, pipeline: &FittedPipeline) -> Result<RankedAnswers> {
    if k == 0 {
        return Err(Error::Query("k must be >= 1".into()));
    }
    let pre = pipeline.preprocess(user_query).map_err(|reason| match reason {
        DropReason::Realtime => Error::UnsupportedQuery(format!(
            "{user_query:?} asks for real-time information"
        )),
        _ => Error::Query(format!("{user_query:?} has no content after preprocessing")),
    })?;
    let cluster_id = pipeline.map_query(&pre.text_contextual)?;
    let records = pipeline.cluster_records(cluster_id);
    let (candidates, fallback) = candidates_with_fallback(&records, pre.detected_crop.as_deref());
    if fallback {
        log::warn!(
            "no answers in cluster {cluster_id} mention {:?}; returning unfiltered answers",
            pre.detected_crop
        );
    }
    let (_, answers) = rank_answers(
        &candidates,
        k,
        &pipeline.config.retrieval,
        &pipeline.config.corpus.stopwords,
    );
    Ok(RankedAnswers {
        query: user_query.to_string(),
        crop: pre.detected_crop,
        cluster_id,
        fallback_unfiltered: fallback,
        answers,
        k_requested: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(index: usize, crop: &str, answer: &str) -> CallRecord {
        CallRecord {
            index,
            crop: crop.into(),
            query_raw: format!("fertilizer dose for {crop}"),
            answer_raw: answer.into(),
        }
    }

    #[test]
    fn crop_filter() {
        let rows = [
            rec(0, "Mosambi", "apply urea 500 g per plant"),
            rec(1, "Orange", "apply urea 400 g per tree"),
            rec(2, "Lemon", "for mosambi and lemon apply ssp"),
        ];
        let refs: Vec<&CallRecord> = rows.iter().collect();
        let kept = select_candidates(&refs, Some("mosambi")).unwrap();
        assert_eq!(kept.iter().map(|c| c.record_index).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(select_candidates(&refs, None).unwrap().len(), 3);
        assert!(select_candidates(&refs, Some("wheat")).is_none());
        let (all, fallback) = candidates_with_fallback(&refs, Some("wheat"));
        assert!(fallback);
        assert_eq!(all.len(), 3);
        // substring is not a token match
        assert!(select_candidates(&refs, Some("ora")).is_none());
    }

    #[test]
    fn answer_similarity_examples() {
        assert_eq!(answer_similarity("spray neem oil", "spray neem oil"), 1.0);
        assert_eq!(answer_similarity("abc", "abd"), 0.25);
        assert_eq!(answer_similarity("abc", "xyz"), 0.0);
        // {s,p,r,a,y} vs {s,p,r,a,y,o,i,l} → 5/8; tokens {spray} vs {spray, oil} → 1/2
        assert_abs_diff_eq!(answer_similarity("spray", "spray oil"), (5.0 / 8.0 + 0.5) / 2.0, epsilon = 1e-15);
        let b = answer_similarity_with("abc", "abd", CharUnit::Bigram);
        // bigrams {ab, bc} vs {ab, bd} → 1/3
        assert_abs_diff_eq!(b, 1.0 / 6.0, epsilon = 1e-15);
    }

    const GROUPS: [&str; 6] = [
        "spray mancozeb 2 g per litre of water",
        "spray mancozeb 2.5 g per litre of water",
        "apply neem cake 250 kg per acre in soil",
        "spray mancozeb 3 g per litre water",
        "apply neem cake 200 kg per acre in soil",
        "contact nearest krishi vigyan kendra",
    ];

    #[test]
    fn near_duplicate_groups_and_outlier() {
        let texts: Vec<String> = GROUPS.iter().map(|s| s.to_string()).collect();
        // hand check of one in-group and one cross-group pair
        assert!(answer_similarity(GROUPS[0], GROUPS[3]) >= 0.6);
        assert!(answer_similarity(GROUPS[0], GROUPS[2]) < 0.6);
        let c = cluster_answers(&texts, 0.6, 1);
        assert_eq!(c.clusters, vec![vec![0, 1, 3], vec![2, 4], vec![5]]);
        let c = cluster_answers(&texts, 0.6, 2);
        assert_eq!(c.clusters, vec![vec![0, 1, 3], vec![2, 4]]);
        assert_eq!(c.dropped, vec![5]);
        let same = vec!["x y".to_string(); 4];
        assert_eq!(cluster_answers(&same, 0.6, 1).clusters, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn ranking_by_size_with_stable_ties() {
        let c = ClusterSet {
            clusters: vec![vec![0, 1, 2], vec![3, 4, 5, 6, 7], vec![8, 9]],
            dropped: vec![],
        };
        assert_eq!(rank_clusters(&c), vec![1, 0, 2]);
        let eq = ClusterSet {
            clusters: vec![vec![0, 3], vec![1, 4], vec![2, 5]],
            dropped: vec![],
        };
        assert_eq!(rank_clusters(&eq), vec![0, 1, 2]);
        let one = ClusterSet {
            clusters: vec![vec![0]],
            dropped: vec![],
        };
        assert_eq!(rank_clusters(&one), vec![0]);
    }

    #[test]
    fn leader_election() {
        let sw = text::default_stopwords();
        assert_eq!(elect_leader(&["only"], &sw), 0);
        assert_eq!(elect_leader(&["spray neem", "spray neem oil 30 ml per pump"], &sw), 1);
        assert_eq!(elect_leader(&["neem oil", "neem oils"], &sw), 1);
        assert_eq!(elect_leader(&["neem oil", "oil neem"], &sw), 0);
        // stopwords do not count as keywords
        assert_eq!(elect_leader(&["the neem and the oil", "neem oil spray"], &sw), 1);
    }

    #[test]
    fn ranked_answers_json_shape() {
        let r = RankedAnswers {
            query: "q".into(),
            crop: None,
            cluster_id: 3,
            fallback_unfiltered: false,
            answers: vec![RankedEntry {
                rank: 1,
                crop: "Garlic".into(),
                source_query: "s".into(),
                answer: "a".into(),
                cluster_size: 2,
            }],
            k_requested: 5,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"query": "q", "crop": null, "cluster_id": 3, "fallback_unfiltered": false,
                "answers": [{"rank": 1, "crop": "Garlic", "source_query": "s", "answer": "a", "cluster_size": 2}]})
        );
    }

    proptest! {
        #[test]
        fn rank_answers_invariants(
            picks in proptest::collection::vec(0usize..6, 1..25),
            k in 1usize..8,
        ) {
            let candidates: Vec<Candidate> = picks
                .iter()
                .enumerate()
                .map(|(i, &g)| Candidate {
                    record_index: i,
                    crop: "c".into(),
                    source_query: "q".into(),
                    answer: format!("{} {i}", GROUPS[g]),
                })
                .collect();
            let (clusters, entries) = rank_answers(&candidates, k, &RetrievalParams::default(), &text::default_stopwords());
            prop_assert_eq!(entries.len(), k.min(clusters.len()));
            for (r, e) in entries.iter().enumerate() {
                prop_assert_eq!(e.rank, r + 1);
                prop_assert_eq!(e.answer.as_str(), candidates[clusters[r].leader_index].answer.as_str());
            }
            prop_assert!(entries.windows(2).all(|w| w[0].cluster_size >= w[1].cluster_size));
            let mut seen = BTreeSet::new();
            for c in &clusters {
                prop_assert!(c.member_indices.contains(&c.leader_index));
                for &m in &c.member_indices {
                    prop_assert!(seen.insert(m));
                }
            }
        }
    }
}
