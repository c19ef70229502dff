//! Evaluation metrics for the three benchmark tasks plus the descriptive
//! statistics used for corpus summaries.

mod caption;
mod retrieval;
mod stats;
mod tagging;

pub use caption::{
    bleu4, caption_overall, cider, meteor_exact, meteor_pair, segment, CaptionScores,
    MeteorParams, SegmentedCaption,
};
pub use retrieval::{mean_pool, recall_at, RecallReport, SimMatrix};
pub use stats::{describe, vocab_compare, Description, VocabOverlap};
pub use tagging::{average_precision, mean_ap, transfer_scores, Transfer};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Tagging,
    Retrieval,
    Caption,
}

/// Scores of one task: named parts plus their documented aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub scores: BTreeMap<String, f64>,
    pub overall: f64,
}

impl MetricReport {
    /// Overall is the arithmetic mean of the parts.
    pub fn mean_of(task: Task, scores: BTreeMap<String, f64>) -> Self {
        let overall = if scores.is_empty() {
            0.0
        } else {
            scores.values().sum::<f64>() / scores.len() as f64
        };
        MetricReport { task, scores, overall }
    }

    /// Per-cutoff recall with SumR as the overall figure.
    pub fn retrieval(recall: &RecallReport) -> Self {
        MetricReport {
            task: Task::Retrieval,
            scores: recall.to_scores(),
            overall: recall.sum_r,
        }
    }

    /// Reporting-scale caption metrics with their mean as overall.
    pub fn caption(scores: &CaptionScores) -> Self {
        MetricReport {
            task: Task::Caption,
            scores: scores.scaled.clone(),
            overall: scores.overall,
        }
    }
}
