use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

/// Min, max, mean and median (mean of the two middle values for even n).
pub fn describe(values: &[f64]) -> Result<Description> {
    if values.is_empty() {
        return Err(Error::Empty("no values to describe".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(Description {
        min: sorted[0],
        max: sorted[n - 1],
        mean: values.iter().sum::<f64>() / n as f64,
        median,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabOverlap {
    pub common: usize,
    pub novel_in_a: usize,
}

/// Labels shared by two vocabularies and labels only in the first, compared
/// after trimming.
pub fn vocab_compare<A, B>(a: &[A], b: &[B]) -> VocabOverlap
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    let a: HashSet<&str> = a.iter().map(|s| s.as_ref().trim()).collect();
    let b: HashSet<&str> = b.iter().map(|s| s.as_ref().trim()).collect();
    let common = a.intersection(&b).count();
    VocabOverlap {
        common,
        novel_in_a: a.len() - common,
    }
}
