//! Shared domain types for the corpus, its sidecar annotations and the
//! evaluation harness. Everything here is an immutable value; validation
//! lives next to each type and never performs I/O.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SidecarBundle;

/// One video's metadata as crawled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub duration_s: f64,
    pub file_size_bytes: u64,
    pub title: String,
    pub user_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upload_ts: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_caption: Option<String>,
}

impl VideoRecord {
    pub fn new(id: impl Into<String>, duration_s: f64, title: impl Into<String>) -> Self {
        VideoRecord {
            id: id.into(),
            duration_s,
            file_size_bytes: 0,
            title: title.into(),
            user_tags: Vec::new(),
            description: None,
            channel: None,
            upload_ts: None,
            auto_caption: None,
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.user_tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("video id is empty"));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::invalid(format!(
                "video {}: nonpositive duration {}",
                self.id, self.duration_s
            )));
        }
        Ok(())
    }
}

/// Face box in pixels: `[x, y, w, h]`.
pub type FaceBox = [f64; 4];

/// Per-frame detector outputs for one uniformly sampled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    pub face_boxes: Vec<FaceBox>,
    pub ocr_char_count: u32,
}

impl FrameRecord {
    pub fn area(&self) -> f64 {
        f64::from(self.frame_w) * f64::from(self.frame_h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_w == 0 || self.frame_h == 0 {
            return Err(Error::invalid(format!(
                "video {} frame {}: frame dimensions must be positive",
                self.video_id, self.frame_index
            )));
        }
        let (fw, fh) = (f64::from(self.frame_w), f64::from(self.frame_h));
        for b in &self.face_boxes {
            let [x, y, w, h] = *b;
            let inside = b.iter().all(|v| v.is_finite())
                && x >= 0.0
                && y >= 0.0
                && w >= 0.0
                && h >= 0.0
                && x + w <= fw
                && y + h <= fh;
            if !inside {
                return Err(Error::invalid(format!(
                    "video {} frame {}: face box {:?} outside {}x{} frame",
                    self.video_id, self.frame_index, b, self.frame_w, self.frame_h
                )));
            }
        }
        Ok(())
    }
}

/// The three visual recognition dimensions scored by upstream models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Object,
    Action,
    Scene,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Object, Dimension::Action, Dimension::Scene];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Object => "object",
            Dimension::Action => "action",
            Dimension::Scene => "scene",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(Dimension::Object),
            "action" => Ok(Dimension::Action),
            "scene" => Ok(Dimension::Scene),
            other => Err(Error::invalid(format!("unknown dimension {other:?}"))),
        }
    }
}

/// Ground-truth label dimensions: the visual three plus verified user tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagDimension {
    Object,
    Action,
    Scene,
    UserTag,
}

impl TagDimension {
    pub const ALL: [TagDimension; 4] = [
        TagDimension::Object,
        TagDimension::Action,
        TagDimension::Scene,
        TagDimension::UserTag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TagDimension::Object => "object",
            TagDimension::Action => "action",
            TagDimension::Scene => "scene",
            TagDimension::UserTag => "user_tag",
        }
    }
}

impl fmt::Display for TagDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<Dimension> for TagDimension {
    fn from(d: Dimension) -> Self {
        match d {
            Dimension::Object => TagDimension::Object,
            Dimension::Action => TagDimension::Action,
            Dimension::Scene => TagDimension::Scene,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lang {
    Zh,
    En,
}

/// Label scores emitted by one recognition model for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScoreSet {
    pub video_id: String,
    pub dimension: Dimension,
    pub scores: BTreeMap<String, f64>,
}

impl LabelScoreSet {
    pub fn validate(&self) -> Result<()> {
        for (label, &score) in &self.scores {
            if label.is_empty() {
                return Err(Error::invalid(format!(
                    "video {}: empty {} label",
                    self.video_id, self.dimension
                )));
            }
            if !(score >= 0.0) || !score.is_finite() {
                return Err(Error::invalid(format!(
                    "video {}: {} label {label:?} has invalid score {score}",
                    self.video_id, self.dimension
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub video_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "video {}: non-finite feature value",
                self.video_id
            )));
        }
        if self.values.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid(format!(
                "video {}: zero feature vector",
                self.video_id
            )));
        }
        Ok(())
    }
}

/// Part-of-speech classes the title patterns need. Richer tag sets are
/// mapped onto these at ingestion time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pos {
    Verb,
    Noun,
    Adjective,
    MentalVerb,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    VerbObject,
    ModifierHead,
    SubjectVerb,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitleToken {
    pub surface: String,
    pub pos: Pos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
}

impl TitleToken {
    pub fn new(surface: impl Into<String>, pos: Pos) -> Self {
        TitleToken {
            surface: surface.into(),
            pos,
            head: None,
            relation: None,
        }
    }

    /// Attach a dependency arc pointing at `head`.
    pub fn arc(mut self, head: usize, relation: Relation) -> Self {
        self.head = Some(head);
        self.relation = Some(relation);
        self
    }
}

/// Dependency parse of a title, produced upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitleTokenization {
    pub video_id: String,
    pub tokens: Vec<TitleToken>,
}

impl TitleTokenization {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            if let Some(h) = t.head {
                if h >= self.tokens.len() {
                    return Err(Error::invalid(format!(
                        "video {}: token {i} head {h} out of range",
                        self.video_id
                    )));
                }
                if h == i {
                    return Err(Error::invalid(format!(
                        "video {}: token {i} is its own head",
                        self.video_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Why a video was removed by the cleaning pipeline. Declaration order is
/// the pipeline's stage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EmptyTitle,
    FaceOnly,
    TextHeavy,
    ContentLess,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::EmptyTitle,
        Category::FaceOnly,
        Category::TextHeavy,
        Category::ContentLess,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::EmptyTitle => "empty_title",
            Category::FaceOnly => "face_only",
            Category::TextHeavy => "text_heavy",
            Category::ContentLess => "content_less",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Evidence = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningVerdict {
    pub video_id: String,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub evidence: Evidence,
}

impl CleaningVerdict {
    pub fn kept(video_id: impl Into<String>, evidence: Evidence) -> Self {
        CleaningVerdict {
            video_id: video_id.into(),
            kept: true,
            category: None,
            evidence,
        }
    }

    pub fn removed(video_id: impl Into<String>, category: Category, evidence: Evidence) -> Self {
        CleaningVerdict {
            video_id: video_id.into(),
            kept: false,
            category: Some(category),
            evidence,
        }
    }
}

/// Per-language label lists of one dimension.
pub type LangLabels = BTreeMap<Lang, Vec<String>>;

/// Reference annotation of one test video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub title_relevant: bool,
    pub caption: BTreeMap<Lang, String>,
    pub labels: BTreeMap<TagDimension, LangLabels>,
}

impl GroundTruth {
    pub fn labels_of(&self, dim: TagDimension, lang: Lang) -> &[String] {
        self.labels
            .get(&dim)
            .and_then(|m| m.get(&lang))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Dimensions without a single label in `lang`.
    pub fn empty_dimensions(&self, lang: Lang) -> Vec<TagDimension> {
        TagDimension::ALL
            .into_iter()
            .filter(|&d| self.labels_of(d, lang).is_empty())
            .collect()
    }

    /// A finalized record carries at least one label in every dimension.
    pub fn validate(&self) -> Result<()> {
        let empty = self.empty_dimensions(Lang::Zh);
        if !empty.is_empty() {
            let names: Vec<_> = empty.iter().map(|d| d.as_str()).collect();
            return Err(Error::invalid(format!(
                "video {}: no labels in {}",
                self.video_id,
                names.join(", ")
            )));
        }
        Ok(())
    }
}

/// A scored list of items, held in descending score order with ties broken
/// by ascending item name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub subject_id: String,
    pub ranking: Vec<(String, f64)>,
}

impl RankedPrediction {
    pub fn new(subject_id: impl Into<String>, mut items: Vec<(String, f64)>) -> Result<Self> {
        let subject_id = subject_id.into();
        if let Some((item, s)) = items.iter().find(|(_, s)| s.is_nan()) {
            return Err(Error::invalid(format!(
                "{subject_id}: item {item:?} has score {s}"
            )));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for (item, _) in &items {
            if !seen.insert(item.as_str()) {
                return Err(Error::invalid(format!(
                    "{subject_id}: duplicate item {item:?}"
                )));
            }
        }
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedPrediction {
            subject_id,
            ranking: items,
        })
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.ranking.iter().map(|(i, _)| i.as_str())
    }
}

/// Visual tokens of `k` frames, each with `p` patch tokens preceded by one
/// classification token at index 0. Stored row-major as `k × (p+1) × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    k: usize,
    p: usize,
    d: usize,
    values: Vec<f64>,
}

impl TokenGrid {
    pub fn new(k: usize, p: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || p == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "token grid needs k, p, d >= 1 (got {k}, {p}, {d})"
            )));
        }
        let expected = k * (p + 1) * d;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "token grid {k}x{}x{d} needs {expected} values, got {}",
                p + 1,
                values.len()
            )));
        }
        Ok(TokenGrid { k, p, d, values })
    }

    /// Grid whose entries are a deterministic function of their position.
    pub fn from_fn(k: usize, p: usize, d: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(k * (p + 1) * d);
        for frame in 0..k {
            for tok in 0..=p {
                for c in 0..d {
                    values.push(f(frame, tok, c));
                }
            }
        }
        Self::new(k, p, d, values)
    }

    pub fn frames(&self) -> usize {
        self.k
    }

    pub fn patches(&self) -> usize {
        self.p
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn token(&self, frame: usize, index: usize) -> &[f64] {
        let start = (frame * (self.p + 1) + index) * self.d;
        &self.values[start..start + self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    DuplicateId,
    EmptyId,
    NonpositiveDuration,
    EmptyTitle,
    MissingTitleTokens,
    MissingFrames,
    MissingLabelScores,
    MissingFeatures,
    InvalidSidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn push(&mut self, video_id: Option<&str>, kind: IssueKind, message: impl Into<String>) {
        self.issues.push(Issue {
            video_id: video_id.map(str::to_owned),
            kind,
            message: message.into(),
        });
    }

    pub fn of_kind(&self, kind: IssueKind) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(move |i| i.kind == kind)
    }

    /// Whether any issue blocks downstream stages (as opposed to notes about
    /// sidecars a stage will treat conservatively).
    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| {
            matches!(
                i.kind,
                IssueKind::DuplicateId
                    | IssueKind::EmptyId
                    | IssueKind::NonpositiveDuration
                    | IssueKind::InvalidSidecar
            )
        })
    }
}

/// Check a corpus against its sidecars without mutating either.
pub fn validate_corpus(records: &[VideoRecord], sidecars: &SidecarBundle) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        let id = r.id.as_str();
        if id.is_empty() {
            report.push(None, IssueKind::EmptyId, "record with empty id");
        } else if !seen.insert(id) {
            report.push(Some(id), IssueKind::DuplicateId, format!("duplicate id {id}"));
        }
        if !(r.duration_s > 0.0) || !r.duration_s.is_finite() {
            report.push(
                Some(id),
                IssueKind::NonpositiveDuration,
                format!("nonpositive duration {}", r.duration_s),
            );
        }
        if r.title.trim().is_empty() {
            report.push(Some(id), IssueKind::EmptyTitle, "title is empty");
        }
        match sidecars.title_tokens.get(id) {
            None => report.push(
                Some(id),
                IssueKind::MissingTitleTokens,
                "empty-title stage will skip (treated as missing-title removal)",
            ),
            Some(t) => {
                if let Err(e) = t.validate() {
                    report.push(Some(id), IssueKind::InvalidSidecar, e.to_string());
                }
            }
        }
        match sidecars.frames.get(id) {
            None => report.push(
                Some(id),
                IssueKind::MissingFrames,
                "face and text stages will pass the video as unscored",
            ),
            Some(frames) => {
                for f in frames {
                    if let Err(e) = f.validate() {
                        report.push(Some(id), IssueKind::InvalidSidecar, e.to_string());
                    }
                }
            }
        }
        let scored = Dimension::ALL
            .iter()
            .any(|&d| sidecars.label_scores.contains_key(&(id.to_owned(), d)));
        if !scored {
            report.push(
                Some(id),
                IssueKind::MissingLabelScores,
                "content-less stage will pass the video as unscored",
            );
        }
        if !sidecars.features.contains_key(id) {
            report.push(
                Some(id),
                IssueKind::MissingFeatures,
                "video cannot take part in neighbor voting",
            );
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_prediction_orders_and_breaks_ties() {
        let p = RankedPrediction::new(
            "v",
            vec![("b".into(), 0.5), ("c".into(), 0.9), ("a".into(), 0.5)],
        )
        .unwrap();
        let items: Vec<_> = p.items().collect();
        assert_eq!(items, ["c", "a", "b"]);
    }

    #[test]
    fn ranked_prediction_rejects_duplicates_and_nan() {
        assert!(RankedPrediction::new("v", vec![("a".into(), 1.0), ("a".into(), 0.5)]).is_err());
        assert!(RankedPrediction::new("v", vec![("a".into(), f64::NAN)]).is_err());
    }

    #[test]
    fn frame_box_must_fit() {
        let mut f = FrameRecord {
            video_id: "v".into(),
            frame_index: 0,
            frame_w: 100,
            frame_h: 100,
            face_boxes: vec![[10.0, 10.0, 90.0, 90.0]],
            ocr_char_count: 0,
        };
        assert!(f.validate().is_ok());
        f.face_boxes = vec![[10.0, 0.0, 91.0, 10.0]];
        assert!(f.validate().is_err());
    }

    #[test]
    fn title_token_cannot_head_itself() {
        let t = TitleTokenization {
            video_id: "v".into(),
            tokens: vec![TitleToken::new("a", Pos::Verb).arc(0, Relation::Other)],
        };
        assert!(t.validate().is_err());
        let t = TitleTokenization {
            video_id: "v".into(),
            tokens: vec![TitleToken::new("a", Pos::Verb).arc(3, Relation::Other)],
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn video_record_rejects_zero_duration() {
        assert!(VideoRecord::new("v", 0.0, "t").validate().is_err());
        assert!(VideoRecord::new("", 3.0, "t").validate().is_err());
        assert!(VideoRecord::new("v", 3.0, "t").validate().is_ok());
    }

    #[test]
    fn token_grid_shape_checked() {
        assert!(TokenGrid::new(0, 1, 1, vec![]).is_err());
        assert!(TokenGrid::new(1, 1, 1, vec![0.0; 3]).is_err());
        let g = TokenGrid::from_fn(2, 2, 1, |f, t, _| (f * 10 + t) as f64).unwrap();
        assert_eq!(g.token(1, 2), &[12.0]);
    }

    #[test]
    fn validate_corpus_flags_duplicates_and_duration() {
        let records = vec![
            VideoRecord::new("a", 3.0, "x"),
            VideoRecord::new("a", 0.0, "y"),
        ];
        let report = validate_corpus(&records, &SidecarBundle::default());
        assert_eq!(report.of_kind(IssueKind::DuplicateId).count(), 1);
        assert_eq!(report.of_kind(IssueKind::NonpositiveDuration).count(), 1);
        assert_eq!(report.of_kind(IssueKind::MissingTitleTokens).count(), 2);
        assert!(report.has_errors());
    }

    #[test]
    fn missing_tokens_note_names_the_treatment() {
        let records = vec![VideoRecord::new("a", 3.0, "x")];
        let report = validate_corpus(&records, &SidecarBundle::default());
        let issue = report.of_kind(IssueKind::MissingTitleTokens).next().unwrap();
        assert!(issue.message.contains("treated as missing-title removal"));
        assert!(!report.has_errors());
    }
}
