use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};

use super::model::{argmax, lstm_forward, MapperModel, Mode};
use super::train::LabeledExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: usize,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub truth: usize,
    pub predicted: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total: usize,
    pub correct: usize,
    pub per_class: Vec<ClassCounts>,
    /// Off-diagonal confusion cells with a nonzero count.
    pub confusion: Vec<Confusion>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Support-weighted mean of `num/den` terms. Each term is computed as
/// `support·num/den` so a term whose denominator is the support reduces to an
/// exact integer.
fn weighted(terms: impl Iterator<Item = (usize, f64, f64)>, total: usize) -> f64 {
    let sum: f64 = terms
        .map(|(support, num, den)| if den == 0.0 { 0.0 } else { support as f64 * num / den })
        .sum();
    sum / total as f64
}

/// One-vs-rest counts per label over the union of true and predicted labels,
/// with support-weighted averages. Undefined precision or recall counts as 0.
pub fn classification_report(truth: &[usize], predicted: &[usize]) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Metric("empty evaluation set".into()));
    }
    if truth.len() != predicted.len() {
        return Err(Error::Metric(format!(
            "{} labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut counts: BTreeMap<usize, (usize, usize, usize, usize)> = BTreeMap::new();
    let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        counts.entry(t).or_default().0 += 1;
        counts.entry(p).or_default();
        if t == p {
            counts.get_mut(&t).expect("present").1 += 1;
        } else {
            counts.get_mut(&p).expect("present").2 += 1;
            counts.get_mut(&t).expect("present").3 += 1;
            *cells.entry((t, p)).or_default() += 1;
        }
    }
    let total = truth.len();
    let per_class: Vec<ClassCounts> = counts
        .into_iter()
        .map(|(label, (support, tp, fp, fn_))| {
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassCounts {
                label,
                support,
                tp,
                fp,
                fn_,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let correct: usize = per_class.iter().map(|c| c.tp).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        weighted_precision: weighted(
            per_class.iter().map(|c| (c.support, c.tp as f64, (c.tp + c.fp) as f64)),
            total,
        ),
        weighted_recall: weighted(
            per_class.iter().map(|c| (c.support, c.tp as f64, c.support as f64)),
            total,
        ),
        weighted_f1: weighted(per_class.iter().map(|c| (c.support, c.f1, 1.0)), total),
        total,
        correct,
        per_class,
        confusion: cells
            .into_iter()
            .map(|((truth, predicted), count)| Confusion {
                truth,
                predicted,
                count,
            })
            .collect(),
    })
}

/// Predicted cluster id (through the label map) and probability per input.
pub fn predict_batch(model: &MapperModel, embeddings: &[EmbeddingVector]) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(embeddings.len());
    for chunk in embeddings.chunks(256) {
        let probs = lstm_forward(model, chunk, Mode::Infer, 0)?;
        for row in probs.rows() {
            let (c, p) = argmax(row.as_slice().expect("contiguous row"));
            out.push((model.label_map[c], p));
        }
    }
    Ok(out)
}

/// Scores the model on labelled examples whose labels are cluster ids.
pub fn evaluate_mapper(model: &MapperModel, test: &[LabeledExample]) -> Result<EvalReport> {
    let embeddings: Vec<EmbeddingVector> = test.iter().map(|e| e.embedding.clone()).collect();
    let predicted: Vec<usize> = predict_batch(model, &embeddings)?.into_iter().map(|(c, _)| c).collect();
    let truth: Vec<usize> = test.iter().map(|e| e.label).collect();
    classification_report(&truth, &predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 2, 2, 2];
        let r = classification_report(&y, &y).unwrap();
        assert_eq!(
            (r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(r.confusion.is_empty());
    }

    #[test]
    fn weighted_recall_by_hand() {
        // supports (3, 1); class 0 all right, class 1 predicted as 0
        let r = classification_report(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(r.weighted_recall, 0.75);
        assert_eq!(r.accuracy, 0.75);
        // class 0 precision 3/4, class 1 precision undefined → 0
        assert_abs_diff_eq!(r.weighted_precision, 0.75 * 0.75, epsilon = 1e-12);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.confusion, vec![Confusion { truth: 1, predicted: 0, count: 1 }]);
    }

    #[test]
    fn predictions_outside_truth_labels() {
        let r = classification_report(&[0, 0, 1], &[0, 5, 1]).unwrap();
        let five = r.per_class.iter().find(|c| c.label == 5).unwrap();
        assert_eq!((five.support, five.fp), (0, 1));
        assert_abs_diff_eq!(r.accuracy, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(classification_report(&[], &[]), Err(Error::Metric(_))));
        assert!(classification_report(&[1], &[1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(pairs in proptest::collection::vec((0usize..7, 0usize..7), 1..200)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = classification_report(&t, &p).unwrap();
            prop_assert_eq!(r.weighted_recall, r.accuracy);
            for c in &r.per_class {
                let expect = if c.precision + c.recall > 0.0 {
                    2.0 * c.precision * c.recall / (c.precision + c.recall)
                } else { 0.0 };
                prop_assert_eq!(c.f1, expect);
            }
            let f1s: Vec<f64> = r.per_class.iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
            let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.weighted_f1 >= lo - 1e-12 && r.weighted_f1 <= hi + 1e-12);
            for m in [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
