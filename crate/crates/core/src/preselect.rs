//! Candidate preselection for manual annotation: exact cosine neighbors over
//! video-level features, neighbor voting on user tags, seeded sampling and
//! the duration cut.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureVector, VideoRecord};

/// Unit-normalized feature vectors for exhaustive cosine scans.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    ids: Vec<String>,
    position: HashMap<String, usize>,
    unit: Vec<Vec<f64>>,
}

impl FeatureIndex {
    pub fn new<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let mut entries: Vec<&FeatureVector> = features.into_iter().collect();
        entries.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let width = entries.first().map(|f| f.values.len());
        let mut ids = Vec::with_capacity(entries.len());
        let mut position = HashMap::with_capacity(entries.len());
        let mut unit = Vec::with_capacity(entries.len());
        for f in entries {
            if Some(f.values.len()) != width {
                return Err(Error::invalid(format!(
                    "video {}: feature dimension {} differs from {}",
                    f.video_id,
                    f.values.len(),
                    width.unwrap_or(0)
                )));
            }
            let norm = f.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::invalid(format!(
                    "video {}: zero-norm feature vector",
                    f.video_id
                )));
            }
            if position.insert(f.video_id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(f.video_id.clone()));
            }
            ids.push(f.video_id.clone());
            unit.push(f.values.iter().map(|v| v / norm).collect());
        }
        Ok(FeatureIndex { ids, position, unit })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.position.contains_key(id)
    }

    /// Top-`k` other videos by cosine similarity, descending, ties by id.
    pub fn nearest(&self, query_id: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let &q = self
            .position
            .get(query_id)
            .ok_or_else(|| Error::invalid(format!("query {query_id} has no feature vector")))?;
        if k + 1 > self.len() {
            return Err(Error::invalid(format!(
                "k={k} exceeds the {} other videos",
                self.len() - 1
            )));
        }
        let query = &self.unit[q];
        let mut scored: Vec<(usize, f64)> = self
            .unit
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != q)
            .map(|(i, v)| (i, dot(query, v)))
            .collect();
        // ids are sorted, so index order is id order
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn nearest_neighbors<'a>(
    query_id: &str,
    features: impl IntoIterator<Item = &'a FeatureVector>,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    FeatureIndex::new(features)?.nearest(query_id, k)
}

/// Count, for each of the query's own tags, how many neighbors carry it.
/// Tags are compared after trimming whitespace.
pub fn vote_tags(query: &VideoRecord, neighbors: &[&VideoRecord], min_votes: usize) -> BTreeMap<String, usize> {
    let mut votes: BTreeMap<String, usize> = query
        .user_tags
        .iter()
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| (t.to_owned(), 0))
        .collect();
    for n in neighbors {
        for (tag, count) in votes.iter_mut() {
            if n.user_tags.iter().any(|t| t.trim() == tag) {
                *count += 1;
            }
        }
    }
    votes.retain(|_, c| *c >= min_votes.max(1));
    votes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreselectConfig {
    pub k: usize,
    pub min_votes: usize,
    pub sample_n: usize,
    pub max_duration_s: f64,
    pub seed: u64,
}

impl Default for PreselectConfig {
    fn default() -> Self {
        PreselectConfig {
            k: 200,
            min_votes: 1,
            sample_n: 10_000,
            max_duration_s: 60.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub video_id: String,
    pub voted_tags: BTreeMap<String, usize>,
}

/// Preselect annotation candidates from a cleaned corpus.
///
/// Videos without a feature vector cannot vote or be voted on and are
/// skipped. The output keeps corpus order.
pub fn preselect_candidates(
    corpus: &[VideoRecord],
    features: &[FeatureVector],
    cfg: &PreselectConfig,
) -> Result<Vec<Candidate>> {
    let by_id: HashMap<&str, &VideoRecord> = corpus.iter().map(|v| (v.id.as_str(), v)).collect();
    let index = FeatureIndex::new(features.iter().filter(|f| by_id.contains_key(f.video_id.as_str())))?;
    let k = cfg.k.min(index.len().saturating_sub(1));

    let voted: Vec<Option<Candidate>> = corpus
        .par_iter()
        .map(|video| -> Result<Option<Candidate>> {
            if !index.contains(&video.id) {
                return Ok(None);
            }
            let neighbors: Vec<&VideoRecord> = index
                .nearest(&video.id, k)?
                .iter()
                .map(|(id, _)| by_id[id.as_str()])
                .collect();
            let votes = vote_tags(video, &neighbors, cfg.min_votes);
            Ok((!votes.is_empty()).then(|| Candidate {
                video_id: video.id.clone(),
                voted_tags: votes,
            }))
        })
        .collect::<Result<_>>()?;
    let eligible: Vec<Candidate> = voted.into_iter().flatten().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.sample_n.min(eligible.len());
    let mut picked = index::sample(&mut rng, eligible.len(), n).into_vec();
    picked.sort_unstable();

    Ok(picked
        .into_iter()
        .map(|i| &eligible[i])
        .filter(|c| by_id[c.video_id.as_str()].duration_s <= cfg.max_duration_s)
        .cloned()
        .collect())
}
