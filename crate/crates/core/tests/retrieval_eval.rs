use agriqrs::corpus::CropLexicon;
use agriqrs::evalharness::{evaluate_retrieval, ScoredAnswer, ScoredQuery};
use agriqrs::pipeline::{FittedPipeline, PipelineConfig};
use agriqrs::retrieval::top_k_answers;
use agriqrs::synth::{synthetic_corpus, SynthConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fitted() -> FittedPipeline {
    let corpus = synthetic_corpus(&SynthConfig {
        n_queries: 600,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let mut config = PipelineConfig::default();
    config.train.hidden1 = 48;
    config.train.hidden2 = 32;
    config.train.learning_rate = 5e-3;
    let lexicon = CropLexicon::new(corpus.crops.clone());
    FittedPipeline::fit_records(corpus.records, lexicon, config).unwrap()
}

/// Scores follow the system's own ranking (cluster size, capped at 10), so
/// relevance order equals cluster-size order.
fn constructed_truth(p: &FittedPipeline, n: usize) -> Vec<ScoredQuery> {
    let mut out = Vec::new();
    for (record, _) in p.records.iter().take(n) {
        let Ok(ranked) = top_k_answers(&record.query_raw, 10, p) else { continue };
        out.push(ScoredQuery {
            query: record.query_raw.clone(),
            crop: ranked.crop.clone(),
            scored_answers: ranked
                .answers
                .iter()
                .map(|a| ScoredAnswer {
                    answer: a.answer.clone(),
                    score: a.cluster_size.min(10) as u32,
                })
                .collect(),
        });
    }
    out
}

#[test]
fn constructed_ground_truth_scores_one_and_permutation_is_reported() {
    let p = fitted();
    let truth = constructed_truth(&p, 200);
    assert!(truth.len() >= 150, "only {} queries answered", truth.len());
    let rows = evaluate_retrieval(&p, &truth, &[1, 3, 5, 10]).unwrap();
    for r in &rows {
        assert_eq!(r.mean_ndcg, Some(1.0), "k = {}: {r:?}", r.k);
        assert_eq!(r.queries_evaluated, truth.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let permuted: Vec<ScoredQuery> = truth
        .iter()
        .map(|q| {
            let mut scores: Vec<u32> = (1..=q.scored_answers.len() as u32).collect();
            scores.shuffle(&mut rng);
            ScoredQuery {
                scored_answers: q
                    .scored_answers
                    .iter()
                    .zip(scores)
                    .map(|(a, score)| ScoredAnswer { answer: a.answer.clone(), score })
                    .collect(),
                ..q.clone()
            }
        })
        .collect();
    for r in evaluate_retrieval(&p, &permuted, &[1, 3, 5, 10]).unwrap() {
        println!(
            "random relevance, k = {}: mean NDCG {:.4} over {} queries",
            r.k,
            r.mean_ndcg.unwrap_or(f64::NAN),
            r.queries_evaluated
        );
    }
}

#[test]
fn unanswerable_and_unscored_queries_are_skipped() {
    let p = fitted();
    let set = vec![
        ScoredQuery {
            query: "weather forecast for wheat".into(),
            crop: Some("wheat".into()),
            scored_answers: vec![ScoredAnswer { answer: "x".into(), score: 3 }],
        },
        ScoredQuery {
            query: "anything".into(),
            crop: None,
            scored_answers: vec![],
        },
    ];
    let rows = evaluate_retrieval(&p, &set, &[3]).unwrap();
    assert_eq!(rows[0].queries_skipped, 2);
    assert_eq!(rows[0].mean_ndcg, None);
}
