use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::ingest::LabelSimilarity;
use crate::model::RankedPrediction;

/// Average precision of a ranking against a relevant set. Relevant labels
/// missing from the ranking contribute zero.
pub fn average_precision<S: AsRef<str>>(pred: &RankedPrediction, relevant: &[S]) -> Result<f64> {
    let relevant: HashSet<&str> = relevant.iter().map(AsRef::as_ref).collect();
    if relevant.is_empty() {
        return Err(Error::Empty(format!(
            "{}: no relevant labels",
            pred.subject_id
        )));
    }
    let mut order: Vec<&(String, f64)> = pred.ranking.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, (item, _)) in order.iter().enumerate() {
        if relevant.contains(item.as_str()) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Mean of per-video average precision.
pub fn mean_ap<S: AsRef<str>>(per_video: &[(RankedPrediction, Vec<S>)]) -> Result<f64> {
    if per_video.is_empty() {
        return Err(Error::Empty("no videos to average".into()));
    }
    let total = per_video
        .iter()
        .map(|(p, r)| average_precision(p, r))
        .sum::<Result<f64>>()?;
    Ok(total / per_video.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub prediction: RankedPrediction,
    /// (source label, tag) pairs absent from the similarity table, scored 0.
    pub missing_pairs: Vec<(String, String)>,
}

/// Map closed-vocabulary predictions onto an open tag vocabulary: each tag
/// scores the similarity-weighted sum of the predicted label scores.
pub fn transfer_scores(
    subject_id: &str,
    top_preds: &[(String, f64)],
    target_vocab: &[String],
    sim: &LabelSimilarity,
) -> Result<Transfer> {
    let mut missing = Vec::new();
    let mut scored = Vec::with_capacity(target_vocab.len());
    for tag in target_vocab {
        let mut score = 0.0;
        for (label, s) in top_preds {
            match sim.get(label, tag) {
                Some(w) => score += s * w,
                None => missing.push((label.clone(), tag.clone())),
            }
        }
        scored.push((tag.clone(), score));
    }
    Ok(Transfer {
        prediction: RankedPrediction::new(subject_id, scored)?,
        missing_pairs: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(items: &[&str]) -> RankedPrediction {
        let n = items.len() as f64;
        RankedPrediction::new(
            "v",
            items
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), n - i as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&ranking(&["a", "b", "c"]), &["a"]).unwrap(), 1.0);
        let ap = average_precision(&ranking(&["a", "b", "c"]), &["a", "c"]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&ranking(&["b", "a"]), &["a"]).unwrap(), 0.5);
    }

    #[test]
    fn ap_unranked_relevant_counts_zero() {
        let ap = average_precision(&ranking(&["a", "b"]), &["a", "z"]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn ap_ties_broken_by_label() {
        let p = RankedPrediction {
            subject_id: "v".into(),
            ranking: vec![("b".into(), 1.0), ("a".into(), 1.0)],
        };
        assert_eq!(average_precision(&p, &["a"]).unwrap(), 1.0);
    }

    #[test]
    fn ap_empty_relevant_is_error() {
        let empty: [&str; 0] = [];
        assert!(average_precision(&ranking(&["a"]), &empty).is_err());
    }

    #[test]
    fn map_examples() {
        let v = vec![
            (ranking(&["a", "b"]), vec!["a"]),
            (ranking(&["b", "a"]), vec!["a"]),
        ];
        assert_eq!(mean_ap(&v).unwrap(), 0.75);
        assert_eq!(mean_ap(&v[..1]).unwrap(), 1.0);
        let none: Vec<(RankedPrediction, Vec<&str>)> = vec![];
        assert!(mean_ap(&none).is_err());
    }

    #[test]
    fn transfer_weighted_sum() {
        let mut sim = LabelSimilarity::default();
        sim.insert("x", "t", 0.8).unwrap();
        sim.insert("y", "t", 0.5).unwrap();
        let preds = vec![("x".to_owned(), 0.5), ("y".to_owned(), 0.3)];
        let out = transfer_scores("v", &preds, &["t".to_owned()], &sim).unwrap();
        assert!((out.prediction.ranking[0].1 - 0.55).abs() < 1e-15);
        assert!(out.missing_pairs.is_empty());
    }

    #[test]
    fn transfer_zero_and_missing() {
        let mut sim = LabelSimilarity::default();
        sim.insert("x", "a", 0.0).unwrap();
        let preds = vec![("x".to_owned(), 1.0)];
        let vocab = vec!["a".to_owned(), "b".to_owned()];
        let out = transfer_scores("v", &preds, &vocab, &sim).unwrap();
        assert!(out.prediction.ranking.iter().all(|(_, s)| *s == 0.0));
        assert_eq!(out.missing_pairs, vec![("x".to_owned(), "b".to_owned())]);
    }

    #[test]
    fn transfer_identity_row_reproduces_order() {
        let mut sim = LabelSimilarity::default();
        let vocab: Vec<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
        for (t, w) in vocab.iter().zip([0.2, 0.9, 0.5]) {
            sim.insert("x", t.as_str(), w).unwrap();
        }
        let out = transfer_scores("v", &[("x".to_owned(), 1.0)], &vocab, &sim).unwrap();
        let items: Vec<_> = out.prediction.items().collect();
        assert_eq!(items, ["q", "r", "p"]);
    }
}
