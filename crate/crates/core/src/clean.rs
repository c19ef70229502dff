//! Four-stage automated cleaning: empty titles, face-only videos, text-heavy
//! videos and content-less videos, applied in that order.
//!
//! All "exceeds" decisions use strict comparisons. The content-less stage
//! is the only one that needs corpus-wide state (percentile thresholds),
//! which is computed in a barrier phase before per-video verdicts run in
//! parallel.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::SidecarBundle;
use crate::model::{
    Category, CleaningVerdict, Dimension, Evidence, FrameRecord, LabelScoreSet, Pos, Relation,
    TitleToken, TitleTokenization, VideoRecord,
};

/// Labels observed fewer times than this use the pooled per-dimension
/// distribution instead of their own.
pub const MIN_LABEL_OBSERVATIONS: usize = 20;

/// Slang and mental-verb terms that carry no content on their own.
pub const BUNDLED_STOPWORDS: &[&str] = &[
    "名场面",
    "打卡挑战",
    "跟着UP主创作吧",
    "觉得",
    "知道",
    "建议",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharFilter {
    /// Drop tokens containing neither a Han ideograph nor an ASCII
    /// alphanumeric character.
    KeepHanAscii,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub face_area_ratio: f64,
    pub frame_fraction: f64,
    pub mosaic_face_threshold: u32,
    pub ocr_char_threshold: u32,
    pub high_pct: f64,
    pub mid_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopword_path: Option<PathBuf>,
    pub char_filter: CharFilter,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            face_area_ratio: 0.5,
            frame_fraction: 0.75,
            mosaic_face_threshold: 8,
            ocr_char_threshold: 50,
            high_pct: 75.0,
            mid_pct: 50.0,
            stopword_path: None,
            char_filter: CharFilter::KeepHanAscii,
        }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.face_area_ratio) {
            return Err(Error::invalid(format!(
                "face_area_ratio must be in (0,1), got {}",
                self.face_area_ratio
            )));
        }
        if !open_unit(self.frame_fraction) {
            return Err(Error::invalid(format!(
                "frame_fraction must be in (0,1), got {}",
                self.frame_fraction
            )));
        }
        if self.mosaic_face_threshold == 0 || self.ocr_char_threshold == 0 {
            return Err(Error::invalid("face and OCR thresholds must be positive"));
        }
        if !(self.mid_pct > 0.0 && self.mid_pct <= self.high_pct && self.high_pct < 100.0) {
            return Err(Error::invalid(format!(
                "percentiles must satisfy 0 < mid <= high < 100, got mid={} high={}",
                self.mid_pct, self.high_pct
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn bundled() -> Self {
        Stopwords(BUNDLED_STOPWORDS.iter().map(|s| s.to_string()).collect())
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Stopwords(words.into_iter().map(Into::into).collect())
    }

    /// Bundled list extended by a file with one term per line (`#` comments).
    pub fn load(extra: Option<&Path>) -> Result<Self> {
        let mut words = Self::bundled();
        if let Some(path) = extra {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for line in text.lines() {
                let w = line.trim();
                if !w.is_empty() && !w.starts_with('#') {
                    words.0.insert(w.to_owned());
                }
            }
        }
        Ok(words)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word.trim())
    }
}

fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

fn passes_char_filter(surface: &str) -> bool {
    surface.chars().any(|c| is_han(c) || c.is_ascii_alphanumeric())
}

/// Which verb-noun phrase pattern matched a title.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VnpPattern {
    VerbObject,
    ModifierHead,
    SubjectVerbObject,
    /// No arcs available: a verb directly followed by a noun.
    AdjacentVerbNoun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TitleOutcome {
    pub is_empty: bool,
    pub surviving: Vec<TitleToken>,
    pub pattern: Option<VnpPattern>,
}

/// Drop stopwords, mental verbs and (optionally) tokens without Han or ASCII
/// alphanumeric characters, then look for a verb-noun phrase among the
/// survivors. Arcs whose head was dropped no longer count.
pub fn filter_title(tokens: &TitleTokenization, stopwords: &Stopwords, char_filter: CharFilter) -> TitleOutcome {
    let keep: Vec<bool> = tokens
        .tokens
        .iter()
        .map(|t| {
            !stopwords.contains(&t.surface)
                && t.pos != Pos::MentalVerb
                && (char_filter == CharFilter::Off || passes_char_filter(&t.surface))
        })
        .collect();
    let survivors: Vec<usize> = (0..tokens.tokens.len()).filter(|&i| keep[i]).collect();
    let tok = |i: usize| &tokens.tokens[i];
    let live_arc = |i: usize| -> Option<(usize, Relation)> {
        let t = tok(i);
        match (t.head, t.relation) {
            (Some(h), Some(r)) if h < keep.len() && keep[h] => Some((h, r)),
            _ => None,
        }
    };

    let has_arc = |rel: Relation| survivors.iter().any(|&i| matches!(live_arc(i), Some((_, r)) if r == rel));
    let pattern = if has_arc(Relation::VerbObject) {
        Some(VnpPattern::VerbObject)
    } else if survivors.iter().any(|&i| {
        matches!(live_arc(i), Some((h, Relation::ModifierHead)) if tok(h).pos == Pos::Noun)
    }) {
        Some(VnpPattern::ModifierHead)
    } else if survivors.iter().any(|&s| match live_arc(s) {
        Some((v, Relation::SubjectVerb)) => survivors
            .iter()
            .any(|&o| live_arc(o) == Some((v, Relation::VerbObject))),
        _ => false,
    }) {
        Some(VnpPattern::SubjectVerbObject)
    } else if survivors.iter().all(|&i| tok(i).relation.is_none())
        && survivors
            .windows(2)
            .any(|w| tok(w[0]).pos == Pos::Verb && tok(w[1]).pos == Pos::Noun)
    {
        Some(VnpPattern::AdjacentVerbNoun)
    } else {
        None
    };

    TitleOutcome {
        is_empty: pattern.is_none(),
        surviving: survivors.into_iter().map(|i| tok(i).clone()).collect(),
        pattern,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceFrameKind {
    TalkingHead,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceOnlyKind {
    TalkingHead,
    FaceMosaic,
}

fn max_face_ratio(frame: &FrameRecord) -> f64 {
    let area = frame.area();
    frame
        .face_boxes
        .iter()
        .map(|b| b[2] * b[3] / area)
        .fold(0.0, f64::max)
}

pub fn classify_face_frame(frame: &FrameRecord, cfg: &CleanConfig) -> FaceFrameKind {
    if max_face_ratio(frame) > cfg.face_area_ratio {
        FaceFrameKind::TalkingHead
    } else {
        FaceFrameKind::Normal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceOutcome {
    pub is_face_only: bool,
    pub kind: Option<FaceOnlyKind>,
    pub evidence: Evidence,
}

fn unscored() -> Evidence {
    Evidence::from([("unscored".to_owned(), json!(true))])
}

pub fn classify_face_video(frames: &[FrameRecord], cfg: &CleanConfig) -> FaceOutcome {
    if frames.is_empty() {
        return FaceOutcome {
            is_face_only: false,
            kind: None,
            evidence: unscored(),
        };
    }
    let talking = frames
        .iter()
        .filter(|f| classify_face_frame(f, cfg) == FaceFrameKind::TalkingHead)
        .count();
    let fraction = talking as f64 / frames.len() as f64;
    let max_faces = frames.iter().map(|f| f.face_boxes.len()).max().unwrap_or(0);
    let max_ratio = frames.iter().map(max_face_ratio).fold(0.0, f64::max);

    let kind = if fraction > cfg.frame_fraction {
        Some(FaceOnlyKind::TalkingHead)
    } else if max_faces > cfg.mosaic_face_threshold as usize {
        Some(FaceOnlyKind::FaceMosaic)
    } else {
        None
    };
    let mut evidence = Evidence::from([
        ("frames_scored".to_owned(), json!(frames.len())),
        ("talking_head_fraction".to_owned(), json!(fraction)),
        ("max_face_area_ratio".to_owned(), json!(max_ratio)),
        ("max_faces".to_owned(), json!(max_faces)),
    ]);
    if let Some(k) = kind {
        evidence.insert("face_kind".to_owned(), json!(k));
    }
    FaceOutcome {
        is_face_only: kind.is_some(),
        kind,
        evidence,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextOutcome {
    pub is_text_heavy: bool,
    pub heavy_frame_fraction: f64,
    pub evidence: Evidence,
}

pub fn classify_text_heavy(frames: &[FrameRecord], cfg: &CleanConfig) -> TextOutcome {
    if frames.is_empty() {
        return TextOutcome {
            is_text_heavy: false,
            heavy_frame_fraction: 0.0,
            evidence: unscored(),
        };
    }
    let heavy = frames
        .iter()
        .filter(|f| f.ocr_char_count > cfg.ocr_char_threshold)
        .count();
    let fraction = heavy as f64 / frames.len() as f64;
    TextOutcome {
        is_text_heavy: fraction > cfg.frame_fraction,
        heavy_frame_fraction: fraction,
        evidence: Evidence::from([
            ("frames_scored".to_owned(), json!(frames.len())),
            ("heavy_frame_fraction".to_owned(), json!(fraction)),
        ]),
    }
}

/// Nearest-rank percentile of ascending-sorted values: the element at
/// 1-based index `ceil(p/100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (pct * n as f64 / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub high: f64,
    pub mid: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PercentileThresholds {
    per_label: BTreeMap<(Dimension, String), Threshold>,
    pooled: BTreeMap<Dimension, Threshold>,
}

#[derive(Serialize)]
struct ThresholdEntry<'a> {
    dimension: Dimension,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    high: f64,
    mid: f64,
}

impl PercentileThresholds {
    /// The label's own threshold when it has enough observations, else the
    /// pooled threshold of its dimension.
    pub fn get(&self, dim: Dimension, label: &str) -> Option<Threshold> {
        self.per_label
            .get(&(dim, label.to_owned()))
            .or_else(|| self.pooled.get(&dim))
            .copied()
    }

    pub fn pooled(&self, dim: Dimension) -> Option<Threshold> {
        self.pooled.get(&dim).copied()
    }

    pub fn label_specific(&self, dim: Dimension, label: &str) -> Option<Threshold> {
        self.per_label.get(&(dim, label.to_owned())).copied()
    }

    fn entries(&self) -> Vec<ThresholdEntry<'_>> {
        let pooled = self.pooled.iter().map(|(&d, t)| ThresholdEntry {
            dimension: d,
            label: None,
            high: t.high,
            mid: t.mid,
        });
        let labels = self.per_label.iter().map(|((d, l), t)| ThresholdEntry {
            dimension: *d,
            label: Some(l),
            high: t.high,
            mid: t.mid,
        });
        pooled.chain(labels).collect()
    }

    /// Hex SHA-256 over the canonical JSON form of all thresholds.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.entries()).expect("thresholds serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Per-label (or pooled) nearest-rank percentile thresholds over every
/// score in the corpus. Every dimension must have at least one score.
pub fn compute_percentile_thresholds<'a>(
    corpus_scores: impl IntoIterator<Item = &'a LabelScoreSet>,
    cfg: &CleanConfig,
) -> Result<PercentileThresholds> {
    let mut per_label: BTreeMap<(Dimension, String), Vec<f64>> = BTreeMap::new();
    let mut pooled: BTreeMap<Dimension, Vec<f64>> = BTreeMap::new();
    for set in corpus_scores {
        for (label, &score) in &set.scores {
            per_label
                .entry((set.dimension, label.clone()))
                .or_default()
                .push(score);
            pooled.entry(set.dimension).or_default().push(score);
        }
    }
    for dim in Dimension::ALL {
        if pooled.get(&dim).map_or(true, Vec::is_empty) {
            return Err(Error::Empty(format!("no {dim} scores in corpus")));
        }
    }
    let threshold = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        Threshold {
            high: nearest_rank(&v, cfg.high_pct).expect("nonempty"),
            mid: nearest_rank(&v, cfg.mid_pct).expect("nonempty"),
        }
    };
    Ok(PercentileThresholds {
        per_label: per_label
            .into_iter()
            .filter(|(_, v)| v.len() >= MIN_LABEL_OBSERVATIONS)
            .map(|(k, v)| (k, threshold(v)))
            .collect(),
        pooled: pooled.into_iter().map(|(d, v)| (d, threshold(v))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentOutcome {
    pub is_contentless: bool,
    pub emitted: BTreeMap<Dimension, Vec<String>>,
}

/// Emit confident labels per dimension: every label at or above its high
/// cutoff, or failing that, the labels at or above the mid cutoff when
/// there are at least two of them.
pub fn filter_contentless<'a>(
    video_scores: impl IntoIterator<Item = &'a LabelScoreSet>,
    thr: &PercentileThresholds,
) -> ContentOutcome {
    let mut emitted = BTreeMap::new();
    for set in video_scores {
        let dim = set.dimension;
        let mut high = Vec::new();
        let mut mid = Vec::new();
        for (label, &score) in &set.scores {
            let Some(t) = thr.get(dim, label) else { continue };
            if score >= t.high {
                high.push(label.clone());
            }
            if score >= t.mid {
                mid.push(label.clone());
            }
        }
        let labels = if !high.is_empty() {
            high
        } else if mid.len() >= 2 {
            mid
        } else {
            continue;
        };
        emitted.entry(dim).or_insert_with(Vec::new).extend(labels);
    }
    ContentOutcome {
        is_contentless: emitted.is_empty(),
        emitted,
    }
}

/// Stage order used by [`run_pipeline`].
pub const STAGE_ORDER: [Category; 4] = Category::ALL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSummary {
    pub input: usize,
    pub kept: usize,
    pub removed: BTreeMap<Category, usize>,
    pub config: CleanConfig,
    pub thresholds_digest: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub verdicts: Vec<CleaningVerdict>,
    pub summary: CleanSummary,
    pub thresholds: Option<PercentileThresholds>,
}

impl PipelineOutput {
    pub fn kept_ids(&self) -> impl Iterator<Item = &str> {
        self.verdicts
            .iter()
            .filter(|v| v.kept)
            .map(|v| v.video_id.as_str())
    }
}

enum StageResult {
    Remove(Evidence),
    Pass(Evidence),
}

use StageResult::{Pass, Remove};

struct Stages<'a> {
    sidecars: &'a SidecarBundle,
    cfg: &'a CleanConfig,
    stopwords: &'a Stopwords,
    thresholds: Option<&'a PercentileThresholds>,
}

impl Stages<'_> {
    fn run(&self, stage: Category, video: &VideoRecord) -> StageResult {
        let frames = self
            .sidecars
            .frames
            .get(&video.id)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        match stage {
            Category::EmptyTitle => {
                let Some(tokens) = self.sidecars.title_tokens.get(&video.id) else {
                    return Remove(Evidence::from([("title_tokens".to_owned(), json!("missing"))]));
                };
                let out = filter_title(tokens, self.stopwords, self.cfg.char_filter);
                let surviving: Vec<&str> = out.surviving.iter().map(|t| t.surface.as_str()).collect();
                let mut ev = Evidence::from([("surviving_tokens".to_owned(), json!(surviving))]);
                match out.pattern {
                    Some(p) => {
                        ev.insert("vnp_pattern".to_owned(), json!(p));
                        Pass(ev)
                    }
                    None => Remove(ev),
                }
            }
            Category::FaceOnly => {
                let out = classify_face_video(frames, self.cfg);
                if out.is_face_only {
                    Remove(out.evidence)
                } else {
                    Pass(prefixed("face_", out.evidence))
                }
            }
            Category::TextHeavy => {
                let out = classify_text_heavy(frames, self.cfg);
                if out.is_text_heavy {
                    Remove(out.evidence)
                } else {
                    Pass(prefixed("text_", out.evidence))
                }
            }
            Category::ContentLess => {
                let sets: Vec<&LabelScoreSet> = Dimension::ALL
                    .iter()
                    .filter_map(|&d| self.sidecars.scores_of(&video.id, d))
                    .collect();
                let (Some(thr), false) = (self.thresholds, sets.is_empty()) else {
                    return Pass(Evidence::from([("content_unscored".to_owned(), json!(true))]));
                };
                let out = filter_contentless(sets, thr);
                let ev = Evidence::from([("emitted_labels".to_owned(), json!(out.emitted))]);
                if out.is_contentless {
                    Remove(ev)
                } else {
                    Pass(ev)
                }
            }
        }
    }

    fn verdict(&self, order: &[Category], video: &VideoRecord) -> CleaningVerdict {
        let mut kept_evidence = Evidence::new();
        for &stage in order {
            match self.run(stage, video) {
                Remove(ev) => return CleaningVerdict::removed(video.id.clone(), stage, ev),
                Pass(ev) => kept_evidence.extend(ev),
            }
        }
        CleaningVerdict::kept(video.id.clone(), kept_evidence)
    }
}

// Passing face/text stages share key names; keep them apart in the merged
// evidence of kept videos.
fn prefixed(prefix: &str, ev: Evidence) -> Evidence {
    ev.into_iter()
        .map(|(k, v)| {
            if k.starts_with(prefix) {
                (k, v)
            } else {
                (format!("{prefix}{k}"), v)
            }
        })
        .collect()
}

/// Run the four stages in the default order.
pub fn run_pipeline(
    corpus: &[VideoRecord],
    sidecars: &SidecarBundle,
    cfg: &CleanConfig,
    stopwords: &Stopwords,
) -> Result<PipelineOutput> {
    run_pipeline_ordered(corpus, sidecars, cfg, stopwords, &STAGE_ORDER)
}

/// Run the stages in a caller-chosen order. A video is removed by the first
/// stage that flags it; later stages are not evaluated for it.
pub fn run_pipeline_ordered(
    corpus: &[VideoRecord],
    sidecars: &SidecarBundle,
    cfg: &CleanConfig,
    stopwords: &Stopwords,
    order: &[Category],
) -> Result<PipelineOutput> {
    cfg.validate()?;

    // Barrier: thresholds come from every scored video in the corpus.
    let ids: HashSet<&str> = corpus.iter().map(|v| v.id.as_str()).collect();
    let corpus_sets: Vec<&LabelScoreSet> = sidecars
        .label_scores
        .values()
        .filter(|s| ids.contains(s.video_id.as_str()))
        .collect();
    let thresholds = if corpus_sets.is_empty() || !order.contains(&Category::ContentLess) {
        None
    } else {
        Some(compute_percentile_thresholds(corpus_sets, cfg)?)
    };

    let stages = Stages {
        sidecars,
        cfg,
        stopwords,
        thresholds: thresholds.as_ref(),
    };
    let verdicts: Vec<CleaningVerdict> = corpus
        .par_iter()
        .map(|v| stages.verdict(order, v))
        .collect();

    let mut removed: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for c in verdicts.iter().filter_map(|v| v.category) {
        *removed.entry(c).or_default() += 1;
    }
    let kept = verdicts.iter().filter(|v| v.kept).count();
    let digest = thresholds
        .as_ref()
        .map(PercentileThresholds::digest)
        .unwrap_or_else(|| hex::encode(Sha256::digest(b"null")));
    Ok(PipelineOutput {
        summary: CleanSummary {
            input: corpus.len(),
            kept,
            removed,
            config: cfg.clone(),
            thresholds_digest: digest,
        },
        verdicts,
        thresholds,
    })
}
