//! Collective annotation workflow as an event-sourced state machine.
//!
//! Every mutation is an [`AnnotationEvent`]. Live requests validate an event
//! against the current state, append it to a [`Journal`], then apply it;
//! replaying the journal through the same `apply` path rebuilds the state
//! exactly. Time enters only through event timestamps, so replay does not
//! depend on the wall clock.
//!
//! Item lifecycle:
//!
//! ```text
//! pending --title_verdict(false)--> title_rejected
//! pending --finalize--> annotated | discarded (some dimension empty)
//! annotated --review_fix--> reviewed
//! ```
//!
//! While pending, an item is worked on through the ordered steps
//! title_verdict, caption_set, labels_set, usertags_verified, finalize by the
//! annotator holding its claim. Claims are leases; an expired claim may be
//! taken over by another annotator, which restarts the item's draft.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::read_jsonl;
use crate::model::{GroundTruth, Lang, TagDimension};

pub const DEFAULT_LEASE_MS: i64 = 30 * 60 * 1000;

/// Captions longer than this (in characters) draw a warning.
pub const CAPTION_SOFT_LIMIT: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    Pending,
    TitleRejected,
    Annotated,
    Discarded,
    Reviewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    TitleVerdict,
    CaptionSet,
    LabelsSet,
    UsertagsVerified,
    Finalize,
}

impl Step {
    fn next(self) -> Option<Step> {
        match self {
            Step::TitleVerdict => Some(Step::CaptionSet),
            Step::CaptionSet => Some(Step::LabelsSet),
            Step::LabelsSet => Some(Step::UsertagsVerified),
            Step::UsertagsVerified => Some(Step::Finalize),
            Step::Finalize => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub video_id: String,
    pub state: ItemState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned_to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_at: Option<i64>,
    /// Next step expected while pending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_step: Option<Step>,
    pub user_tags: Vec<String>,
    pub draft: GroundTruth,
}

impl AnnotationItem {
    fn new(video_id: String, user_tags: Vec<String>) -> Self {
        AnnotationItem {
            draft: empty_draft(&video_id),
            video_id,
            state: ItemState::Pending,
            assigned_to: None,
            claimed_at: None,
            next_step: Some(Step::TitleVerdict),
            user_tags,
        }
    }

    fn claim_live(&self, now: i64, lease_ms: i64) -> bool {
        match (&self.assigned_to, self.claimed_at) {
            (Some(_), Some(at)) => now < at + lease_ms,
            _ => false,
        }
    }

    fn release(&mut self) {
        self.assigned_to = None;
        self.claimed_at = None;
        self.next_step = None;
    }
}

fn empty_draft(video_id: &str) -> GroundTruth {
    GroundTruth {
        video_id: video_id.to_owned(),
        title_relevant: false,
        caption: BTreeMap::new(),
        labels: BTreeMap::new(),
    }
}

/// Label edits keyed by dimension. A listed dimension replaces the whole
/// list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelEdits {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<TagDimension, Vec<String>>,
}

/// One workflow step as submitted by an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", content = "payload", rename_all = "snake_case")]
pub enum StepPayload {
    TitleVerdict {
        relevant: bool,
    },
    CaptionSet {
        caption: String,
    },
    LabelsSet {
        #[serde(default)]
        object: Vec<String>,
        #[serde(default)]
        action: Vec<String>,
        #[serde(default)]
        scene: Vec<String>,
    },
    UsertagsVerified {
        tags: Vec<String>,
    },
    Finalize,
}

impl StepPayload {
    pub fn step(&self) -> Step {
        match self {
            StepPayload::TitleVerdict { .. } => Step::TitleVerdict,
            StepPayload::CaptionSet { .. } => Step::CaptionSet,
            StepPayload::LabelsSet { .. } => Step::LabelsSet,
            StepPayload::UsertagsVerified { .. } => Step::UsertagsVerified,
            StepPayload::Finalize => Step::Finalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Claim,
    TitleVerdict {
        relevant: bool,
    },
    CaptionSet {
        caption: String,
    },
    LabelsSet {
        object: Vec<String>,
        action: Vec<String>,
        scene: Vec<String>,
    },
    UsertagsVerified {
        tags: Vec<String>,
    },
    ReviewFix {
        fixes: LabelEdits,
        translations: LabelEdits,
    },
    Finalize,
}

impl From<StepPayload> for EventBody {
    fn from(p: StepPayload) -> Self {
        match p {
            StepPayload::TitleVerdict { relevant } => EventBody::TitleVerdict { relevant },
            StepPayload::CaptionSet { caption } => EventBody::CaptionSet { caption },
            StepPayload::LabelsSet {
                object,
                action,
                scene,
            } => EventBody::LabelsSet {
                object,
                action,
                scene,
            },
            StepPayload::UsertagsVerified { tags } => EventBody::UsertagsVerified { tags },
            StepPayload::Finalize => EventBody::Finalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts: i64,
    pub annotator: String,
    pub video_id: String,
    #[serde(flatten)]
    pub body: EventBody,
}

/// An item offered for annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub video_id: String,
    #[serde(default)]
    pub user_tags: Vec<String>,
}

/// Trimmed, deduplicated, nonempty labels in first-seen order.
fn clean_labels(labels: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    labels
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && seen.insert(*l))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    lease_ms: i64,
    last_seq: u64,
    queue: Vec<String>,
    items: BTreeMap<String, AnnotationItem>,
}

impl WorkflowState {
    pub fn new(entries: impl IntoIterator<Item = QueueEntry>, lease_ms: i64) -> Result<Self> {
        let mut queue = Vec::new();
        let mut items = BTreeMap::new();
        for e in entries {
            if items.contains_key(&e.video_id) {
                return Err(Error::DuplicateId(e.video_id));
            }
            queue.push(e.video_id.clone());
            let tags = clean_labels(&e.user_tags);
            items.insert(e.video_id.clone(), AnnotationItem::new(e.video_id, tags));
        }
        Ok(WorkflowState {
            lease_ms,
            last_seq: 0,
            queue,
            items,
        })
    }

    /// Rebuild state by applying `events` in order on top of `self`.
    pub fn replay<'a>(mut self, events: impl IntoIterator<Item = &'a AnnotationEvent>) -> Result<Self> {
        for ev in events {
            if ev.seq <= self.last_seq {
                continue;
            }
            self.apply(ev)?;
        }
        Ok(self)
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn lease_ms(&self) -> i64 {
        self.lease_ms
    }

    pub fn item(&self, video_id: &str) -> Option<&AnnotationItem> {
        self.items.get(video_id)
    }

    pub fn items(&self) -> impl Iterator<Item = &AnnotationItem> {
        self.items.values()
    }

    fn get(&self, video_id: &str) -> Result<&AnnotationItem> {
        self.items
            .get(video_id)
            .ok_or_else(|| Error::NotFound(format!("video {video_id}")))
    }

    /// The item `annotator` would be handed at time `now`: their own live
    /// claim if they hold one, else the first pending item in queue order
    /// that is unclaimed or whose lease has expired.
    pub fn next_for(&self, annotator: &str, now: i64) -> Option<&str> {
        let own = self.queue.iter().find(|id| {
            let it = &self.items[*id];
            it.state == ItemState::Pending && it.assigned_to.as_deref() == Some(annotator)
        });
        own.or_else(|| {
            self.queue.iter().find(|id| {
                let it = &self.items[*id];
                it.state == ItemState::Pending && !it.claim_live(now, self.lease_ms)
            })
        })
        .map(String::as_str)
    }

    /// Check that `ev` is legal in the current state without changing it.
    pub fn check(&self, ev: &AnnotationEvent) -> Result<()> {
        if ev.seq != self.last_seq + 1 {
            return Err(Error::Workflow(format!(
                "event seq {} does not follow {}",
                ev.seq, self.last_seq
            )));
        }
        let item = self.get(&ev.video_id)?;
        let conflict = |msg: String| Err(Error::Workflow(format!("video {}: {msg}", ev.video_id)));
        match &ev.body {
            EventBody::Claim => {
                if item.state != ItemState::Pending {
                    return conflict(format!("cannot claim an item in state {:?}", item.state));
                }
                let foreign = item.assigned_to.as_deref().is_some_and(|a| a != ev.annotator);
                if foreign && item.claim_live(ev.ts, self.lease_ms) {
                    return conflict(format!(
                        "claimed by {}",
                        item.assigned_to.as_deref().unwrap_or_default()
                    ));
                }
                Ok(())
            }
            EventBody::ReviewFix { fixes, .. } => {
                if item.state != ItemState::Annotated {
                    return conflict(format!("cannot review an item in state {:?}", item.state));
                }
                let mut fixed = item.draft.clone();
                apply_edits(&mut fixed, fixes, Lang::Zh);
                fixed.validate().or_else(|e| conflict(e.to_string()))
            }
            step => {
                if item.state != ItemState::Pending {
                    return conflict(format!("item is {:?}; no further steps accepted", item.state));
                }
                if item.assigned_to.as_deref() != Some(ev.annotator.as_str()) {
                    return conflict(format!("{} does not hold the claim", ev.annotator));
                }
                let step = step_of(step);
                if item.next_step != Some(step) {
                    return conflict(format!(
                        "step {step:?} out of order (expected {:?})",
                        item.next_step
                    ));
                }
                match &ev.body {
                    EventBody::CaptionSet { caption } if caption.trim().is_empty() => {
                        conflict("caption is empty".into())
                    }
                    EventBody::UsertagsVerified { tags } => {
                        match clean_labels(tags).into_iter().find(|t| !item.user_tags.contains(t)) {
                            Some(t) => conflict(format!("{t:?} is not one of the video's user tags")),
                            None => Ok(()),
                        }
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    /// Validate and apply one event.
    pub fn apply(&mut self, ev: &AnnotationEvent) -> Result<()> {
        self.check(ev)?;
        self.apply_checked(ev);
        Ok(())
    }

    fn apply_checked(&mut self, ev: &AnnotationEvent) {
        self.last_seq = ev.seq;
        let item = self.items.get_mut(&ev.video_id).expect("checked");
        let advance = |item: &mut AnnotationItem| {
            item.next_step = item.next_step.and_then(Step::next);
            item.claimed_at = Some(ev.ts);
        };
        match &ev.body {
            EventBody::Claim => {
                if item.assigned_to.as_deref() != Some(ev.annotator.as_str()) {
                    item.draft = empty_draft(&item.video_id);
                    item.next_step = Some(Step::TitleVerdict);
                }
                item.assigned_to = Some(ev.annotator.clone());
                item.claimed_at = Some(ev.ts);
            }
            EventBody::TitleVerdict { relevant } => {
                item.draft.title_relevant = *relevant;
                if *relevant {
                    advance(item);
                } else {
                    item.state = ItemState::TitleRejected;
                    item.release();
                }
            }
            EventBody::CaptionSet { caption } => {
                item.draft.caption.insert(Lang::Zh, caption.trim().to_owned());
                advance(item);
            }
            EventBody::LabelsSet {
                object,
                action,
                scene,
            } => {
                for (dim, labels) in [
                    (TagDimension::Object, object),
                    (TagDimension::Action, action),
                    (TagDimension::Scene, scene),
                ] {
                    item.draft
                        .labels
                        .entry(dim)
                        .or_default()
                        .insert(Lang::Zh, clean_labels(labels));
                }
                advance(item);
            }
            EventBody::UsertagsVerified { tags } => {
                item.draft
                    .labels
                    .entry(TagDimension::UserTag)
                    .or_default()
                    .insert(Lang::Zh, clean_labels(tags));
                advance(item);
            }
            EventBody::Finalize => {
                item.state = if item.draft.empty_dimensions(Lang::Zh).is_empty() {
                    ItemState::Annotated
                } else {
                    ItemState::Discarded
                };
                item.release();
            }
            EventBody::ReviewFix {
                fixes,
                translations,
            } => {
                apply_edits(&mut item.draft, fixes, Lang::Zh);
                apply_edits(&mut item.draft, translations, Lang::En);
                item.state = ItemState::Reviewed;
            }
        }
    }

    pub fn stats(&self, now: i64) -> QueueStats {
        let mut by_state = BTreeMap::new();
        let mut claimed = 0;
        for it in self.items.values() {
            *by_state.entry(it.state).or_insert(0) += 1;
            if it.state == ItemState::Pending && it.claim_live(now, self.lease_ms) {
                claimed += 1;
            }
        }
        QueueStats {
            total: self.items.len(),
            by_state,
            claimed,
            last_seq: self.last_seq,
        }
    }

    /// Reviewed records sorted by video id, followed by their vocabulary
    /// summary.
    pub fn export(&self) -> (Vec<GroundTruth>, ExportTrailer) {
        let records: Vec<GroundTruth> = self
            .items
            .values()
            .filter(|it| it.state == ItemState::Reviewed)
            .map(|it| it.draft.clone())
            .collect();
        let trailer = ExportTrailer::of(&records);
        (records, trailer)
    }
}

fn step_of(body: &EventBody) -> Step {
    match body {
        EventBody::TitleVerdict { .. } => Step::TitleVerdict,
        EventBody::CaptionSet { .. } => Step::CaptionSet,
        EventBody::LabelsSet { .. } => Step::LabelsSet,
        EventBody::UsertagsVerified { .. } => Step::UsertagsVerified,
        EventBody::Finalize => Step::Finalize,
        EventBody::Claim | EventBody::ReviewFix { .. } => unreachable!("not a workflow step"),
    }
}

fn apply_edits(gt: &mut GroundTruth, edits: &LabelEdits, lang: Lang) {
    if let Some(c) = &edits.caption {
        gt.caption.insert(lang, c.trim().to_owned());
    }
    for (dim, labels) in &edits.labels {
        gt.labels
            .entry(*dim)
            .or_default()
            .insert(lang, clean_labels(labels));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub total: usize,
    pub by_state: BTreeMap<ItemState, usize>,
    /// Pending items under a live lease.
    pub claimed: usize,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportTrailer {
    pub records: usize,
    /// Distinct labels per language and dimension.
    pub vocab: BTreeMap<Lang, BTreeMap<TagDimension, usize>>,
}

impl ExportTrailer {
    pub fn of(records: &[GroundTruth]) -> Self {
        let mut vocab = BTreeMap::new();
        for lang in [Lang::Zh, Lang::En] {
            let per_dim: BTreeMap<TagDimension, usize> = TagDimension::ALL
                .iter()
                .map(|&d| {
                    let distinct: BTreeSet<&str> = records
                        .iter()
                        .flat_map(|r| r.labels_of(d, lang))
                        .map(String::as_str)
                        .collect();
                    (d, distinct.len())
                })
                .collect();
            vocab.insert(lang, per_dim);
        }
        ExportTrailer {
            records: records.len(),
            vocab,
        }
    }
}

/// Export text: one ground-truth record per line, then a
/// `{"trailer": ...}` line.
pub fn format_export(records: &[GroundTruth], trailer: &ExportTrailer) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&serde_json::json!({ "trailer": trailer }))?);
    out.push('\n');
    Ok(out)
}

/// Read the records of an export file, skipping its trailer line. Every
/// record must satisfy the ground-truth invariants.
pub fn load_export(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let lines: Vec<serde_json::Value> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, v) in lines.into_iter().enumerate() {
        if v.get("trailer").is_some() {
            continue;
        }
        let gt: GroundTruth = serde_json::from_value(v).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        gt.validate()?;
        out.push(gt);
    }
    Ok(out)
}

/// Append-only event sink.
pub trait Journal {
    fn append(&mut self, ev: &AnnotationEvent) -> Result<()>;
}

impl Journal for Vec<AnnotationEvent> {
    fn append(&mut self, ev: &AnnotationEvent) -> Result<()> {
        self.push(ev.clone());
        Ok(())
    }
}

/// One JSON event per line, flushed after every append.
pub struct FileJournal {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FileJournal {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(FileJournal {
            out: BufWriter::new(file),
            path,
        })
    }
}

impl Journal for FileJournal {
    fn append(&mut self, ev: &AnnotationEvent) -> Result<()> {
        serde_json::to_writer(&mut self.out, ev)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<AnnotationEvent>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

pub fn save_snapshot(state: &WorkflowState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec(state)?;
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Option<WorkflowState>> {
    let path = path.as_ref();
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Live workflow: state plus the journal every accepted event is written to
/// before it takes effect.
pub struct Workflow<J: Journal> {
    state: WorkflowState,
    journal: J,
}

/// Result of a step submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub item: AnnotationItem,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<J: Journal> Workflow<J> {
    pub fn new(state: WorkflowState, journal: J) -> Self {
        Workflow { state, journal }
    }

    pub fn state(&self) -> &WorkflowState {
        &self.state
    }

    pub fn journal(&self) -> &J {
        &self.journal
    }

    pub fn into_parts(self) -> (WorkflowState, J) {
        (self.state, self.journal)
    }

    fn commit(&mut self, annotator: &str, video_id: &str, now: i64, body: EventBody) -> Result<&AnnotationItem> {
        let ev = AnnotationEvent {
            seq: self.state.last_seq + 1,
            ts: now,
            annotator: annotator.to_owned(),
            video_id: video_id.to_owned(),
            body,
        };
        self.state.check(&ev)?;
        self.journal.append(&ev)?;
        self.state.apply_checked(&ev);
        Ok(&self.state.items[video_id])
    }

    /// Claim (or renew) the next item for `annotator`.
    pub fn next_item(&mut self, annotator: &str, now: i64) -> Result<Option<AnnotationItem>> {
        let Some(id) = self.state.next_for(annotator, now).map(str::to_owned) else {
            return Ok(None);
        };
        self.commit(annotator, &id, now, EventBody::Claim).cloned().map(Some)
    }

    pub fn submit_step(&mut self, annotator: &str, video_id: &str, payload: StepPayload, now: i64) -> Result<StepOutcome> {
        let mut warnings = Vec::new();
        if let StepPayload::CaptionSet { caption } = &payload {
            let n = caption.trim().chars().count();
            if n > CAPTION_SOFT_LIMIT {
                warnings.push(format!(
                    "caption has {n} characters, above the soft limit of {CAPTION_SOFT_LIMIT}"
                ));
            }
        }
        let item = self.commit(annotator, video_id, now, payload.into())?.clone();
        Ok(StepOutcome { item, warnings })
    }

    pub fn review(
        &mut self,
        reviewer: &str,
        video_id: &str,
        fixes: LabelEdits,
        translations: LabelEdits,
        now: i64,
    ) -> Result<AnnotationItem> {
        self.commit(
            reviewer,
            video_id,
            now,
            EventBody::ReviewFix {
                fixes,
                translations,
            },
        )
        .cloned()
    }
}
