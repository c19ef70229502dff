use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Query-by-video similarity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMatrix {
    pub query_ids: Vec<String>,
    pub video_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SimMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.query_ids.len() {
            return Err(Error::invalid(format!(
                "{} rows for {} queries",
                self.rows.len(),
                self.query_ids.len()
            )));
        }
        for (q, row) in self.query_ids.iter().zip(&self.rows) {
            if row.len() != self.video_ids.len() {
                return Err(Error::invalid(format!(
                    "query {q}: row has {} scores for {} videos",
                    row.len(),
                    self.video_ids.len()
                )));
            }
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::invalid(format!("query {q}: NaN score")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// Recall in percent keyed by cutoff.
    pub recalls: BTreeMap<usize, f64>,
    pub sum_r: f64,
    pub queries: usize,
}

impl RecallReport {
    pub fn at(&self, n: usize) -> f64 {
        self.recalls.get(&n).copied().unwrap_or(f64::NAN)
    }

    pub fn to_scores(&self) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = self
            .recalls
            .iter()
            .map(|(n, v)| (format!("R@{n}"), *v))
            .collect();
        m.insert("SumR".into(), self.sum_r);
        m
    }
}

/// Recall at each cutoff over every query in `truth`, in percent. The truth
/// video's rank counts every video scoring higher, plus equal-scoring videos
/// with a smaller id.
pub fn recall_at(matrix: &SimMatrix, truth: &BTreeMap<String, String>, ns: &[usize]) -> Result<RecallReport> {
    matrix.validate()?;
    if truth.is_empty() {
        return Err(Error::Empty("no queries with ground truth".into()));
    }
    let row_of: HashMap<&str, usize> = matrix
        .query_ids
        .iter()
        .enumerate()
        .map(|(i, q)| (q.as_str(), i))
        .collect();
    let col_of: HashMap<&str, usize> = matrix
        .video_ids
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();

    let mut ranks = Vec::with_capacity(truth.len());
    for (query, video) in truth {
        let &r = row_of
            .get(query.as_str())
            .ok_or_else(|| Error::invalid(format!("query {query} has no similarity row")))?;
        let &c = col_of
            .get(video.as_str())
            .ok_or_else(|| Error::invalid(format!("truth video {video} is not a matrix column")))?;
        let row = &matrix.rows[r];
        let target = row[c];
        let ahead = row
            .iter()
            .zip(&matrix.video_ids)
            .filter(|&(&s, id)| s > target || (s == target && id < video))
            .count();
        ranks.push(ahead + 1);
    }

    let nq = ranks.len() as f64;
    let recalls: BTreeMap<usize, f64> = ns
        .iter()
        .map(|&n| {
            let hits = ranks.iter().filter(|&&r| r <= n).count();
            (n, 100.0 * hits as f64 / nq)
        })
        .collect();
    let sum_r = ns.iter().map(|n| recalls[n]).sum();
    Ok(RecallReport {
        recalls,
        sum_r,
        queries: ranks.len(),
    })
}

/// Element-wise mean of frame-level feature vectors.
pub fn mean_pool(frame_features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frame_features
        .first()
        .ok_or_else(|| Error::Empty("no frame features to pool".into()))?;
    let mut acc = vec![0.0; first.len()];
    for (i, f) in frame_features.iter().enumerate() {
        if f.len() != acc.len() {
            return Err(Error::invalid(format!(
                "frame {i} has dimension {}, expected {}",
                f.len(),
                acc.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let n = frame_features.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn truth_third_place() {
        let m = SimMatrix {
            query_ids: ids("q", 1),
            video_ids: ids("v", 4),
            rows: vec![vec![0.9, 0.8, 0.7, 0.1]],
        };
        let truth = BTreeMap::from([("q0".to_owned(), "v2".to_owned())]);
        let r = recall_at(&m, &truth, &[1, 5, 10]).unwrap();
        assert_eq!((r.at(1), r.at(5), r.at(10), r.sum_r), (0.0, 100.0, 100.0, 200.0));
    }

    #[test]
    fn diagonal_dominant_is_perfect() {
        let n = 12;
        let m = SimMatrix {
            query_ids: ids("v", n),
            video_ids: ids("v", n),
            rows: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.1 }).collect())
                .collect(),
        };
        let truth = (0..n).map(|i| (format!("v{i}"), format!("v{i}"))).collect();
        let r = recall_at(&m, &truth, &[1, 5, 10]).unwrap();
        assert_eq!(r.sum_r, 300.0);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let m = SimMatrix {
            query_ids: ids("q", 1),
            video_ids: vec!["b".into(), "a".into()],
            rows: vec![vec![0.5, 0.5]],
        };
        let truth = BTreeMap::from([("q0".to_owned(), "b".to_owned())]);
        assert_eq!(recall_at(&m, &truth, &[1]).unwrap().at(1), 0.0);
    }

    #[test]
    fn missing_row_is_error() {
        let m = SimMatrix {
            query_ids: ids("q", 1),
            video_ids: ids("v", 1),
            rows: vec![vec![1.0]],
        };
        let truth = BTreeMap::from([("q9".to_owned(), "v0".to_owned())]);
        assert!(recall_at(&m, &truth, &[1]).is_err());
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(mean_pool(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(mean_pool(&[vec![7.0, -1.0]]).unwrap(), vec![7.0, -1.0]);
        assert!(mean_pool(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(mean_pool(&[]).is_err());
    }
}
