//! Precision, recall and F1 against gold annotations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ExtractionError;
use crate::corpus::{GoldAnnotation, TranscriptKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptCounts {
    pub key: TranscriptKey,
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_transcript: Vec<TranscriptCounts>,
}

impl ExtractionScore {
    /// One row in the shape "method | P | R | F1".
    pub fn table_row(&self, method: &str) -> String {
        format!(
            "{method:<24} | {:.2} | {:.2} | {:.2}",
            self.precision, self.recall, self.f1
        )
    }

    pub fn table_header() -> String {
        format!("{:<24} | {:<4} | {:<4} | {:<4}", "Method", "P", "R", "F1")
    }
}

/// Micro-averaged scores with exact matching of normalized keywords under
/// set semantics per transcript.
pub fn score_extraction(
    predicted: &BTreeMap<TranscriptKey, BTreeSet<String>>,
    gold: &[GoldAnnotation],
) -> Result<ExtractionScore, ExtractionError> {
    let gold_by_key: BTreeMap<TranscriptKey, &BTreeSet<String>> = gold.iter().map(|g| (g.key(), &g.keywords)).collect();
    if let Some(key) = predicted.keys().find(|k| !gold_by_key.contains_key(*k)) {
        return Err(ExtractionError::UnknownTranscript(key.clone()));
    }

    let mut per_transcript = Vec::with_capacity(gold_by_key.len());
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (key, gold_set) in &gold_by_key {
        let pred = predicted
            .get(key)
            .ok_or_else(|| ExtractionError::MissingPrediction(key.clone()))?;
        let hits = pred.intersection(gold_set).count();
        tp += hits;
        n_pred += pred.len();
        n_gold += gold_set.len();
        per_transcript.push(TranscriptCounts {
            key: key.clone(),
            true_positive: hits,
            predicted: pred.len(),
            gold: gold_set.len(),
        });
    }

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, n_pred);
    let recall = ratio(tp, n_gold);
    // harmonic mean of P and R, in the form with a single rounding
    let f1 = ratio(2 * tp, n_pred + n_gold);
    Ok(ExtractionScore {
        precision,
        recall,
        f1,
        per_transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn single(pred: &[&str], gold: &[&str]) -> ExtractionScore {
        let key = TranscriptKey::new("s1", "p1");
        let predicted = BTreeMap::from([(key, set(pred))]);
        let gold = vec![GoldAnnotation {
            signal_id: "s1".into(),
            participant_id: "p1".into(),
            keywords: set(gold),
        }];
        score_extraction(&predicted, &gold).unwrap()
    }

    #[test]
    fn examples() {
        let s = single(&["a", "b", "c"], &["b", "c", "d"]);
        assert_eq!((s.precision, s.recall, s.f1), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0));
        let s = single(&["a", "b"], &["a", "b"]);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = single(&[], &["a"]);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_average_pools_counts() {
        let k1 = TranscriptKey::new("s1", "p1");
        let k2 = TranscriptKey::new("s2", "p1");
        let predicted = BTreeMap::from([(k1, set(&["a"])), (k2, set(&["x", "y", "z"]))]);
        let gold = vec![
            GoldAnnotation {
                signal_id: "s1".into(),
                participant_id: "p1".into(),
                keywords: set(&["a"]),
            },
            GoldAnnotation {
                signal_id: "s2".into(),
                participant_id: "p1".into(),
                keywords: set(&["x"]),
            },
        ];
        let s = score_extraction(&predicted, &gold).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.per_transcript.len(), 2);
    }

    #[test]
    fn unknown_and_missing_transcripts() {
        let gold = vec![GoldAnnotation {
            signal_id: "s1".into(),
            participant_id: "p1".into(),
            keywords: set(&["a"]),
        }];
        let stray = BTreeMap::from([
            (TranscriptKey::new("s1", "p1"), set(&[])),
            (TranscriptKey::new("s9", "p1"), set(&["a"])),
        ]);
        assert!(matches!(
            score_extraction(&stray, &gold),
            Err(ExtractionError::UnknownTranscript(_))
        ));
        assert!(matches!(
            score_extraction(&BTreeMap::new(), &gold),
            Err(ExtractionError::MissingPrediction(_))
        ));
    }

    proptest! {
        #[test]
        fn bounded_and_consistent(
            pairs in proptest::collection::vec(
                (proptest::collection::btree_set("[a-e]", 0..5), proptest::collection::btree_set("[a-e]", 0..5)),
                1..6,
            )
        ) {
            let mut predicted = BTreeMap::new();
            let mut gold = Vec::new();
            for (i, (p, g)) in pairs.iter().enumerate() {
                let id = format!("s{i}");
                predicted.insert(TranscriptKey::new(&id, "p"), p.clone());
                gold.push(GoldAnnotation { signal_id: id, participant_id: "p".into(), keywords: g.clone() });
            }
            let s = score_extraction(&predicted, &gold).unwrap();
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);

            // gold derived from the prediction itself scores perfectly
            let self_gold: Vec<_> = pairs.iter().enumerate().map(|(i, (p, _))| GoldAnnotation {
                signal_id: format!("s{i}"), participant_id: "p".into(), keywords: p.clone(),
            }).collect();
            if pairs.iter().any(|(p, _)| !p.is_empty()) {
                let s = score_extraction(&predicted, &self_gold).unwrap();
                prop_assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
            }
        }
    }
}
