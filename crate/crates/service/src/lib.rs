//! HTTP front end for the annotation workflow.
//!
//! Every mutation goes through one mutex-guarded [`Workflow`], which writes
//! the event to the append-only log before applying it. On start-up the
//! state is rebuilt from the latest snapshot (if any) plus the log tail.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use curator_core::annotate::{
    format_export, load_snapshot, read_events, save_snapshot, AnnotationItem, FileJournal, ItemState, LabelEdits, QueueEntry,
    QueueStats, StepPayload, Workflow, WorkflowState, DEFAULT_LEASE_MS,
};
use curator_core::model::{Lang, TagDimension, VideoRecord};
use curator_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub log_path: PathBuf,
    pub snapshot_path: Option<PathBuf>,
    /// Write a snapshot after this many accepted events.
    pub snapshot_every: u64,
    pub lease_ms: i64,
    /// `{id}` is replaced by the video id.
    pub media_url: String,
}

impl ServiceConfig {
    pub fn new(log_path: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            log_path: log_path.into(),
            snapshot_path: None,
            snapshot_every: 500,
            lease_ms: DEFAULT_LEASE_MS,
            media_url: "/media/{id}.mp4".into(),
        }
    }
}

/// Item as shown to annotators: workflow state plus display metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    #[serde(flatten)]
    pub item: AnnotationItem,
    pub title: String,
    pub duration_s: f64,
    pub media_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub annotator: String,
    #[serde(flatten)]
    pub step: StepPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub item: ItemView,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub reviewer: String,
    #[serde(default)]
    pub fixes: LabelEdits,
    #[serde(default)]
    pub translations: LabelEdits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsView {
    #[serde(flatten)]
    pub queue: QueueStats,
    /// Distinct Chinese labels used so far, per dimension, for suggestions.
    pub labels: BTreeMap<TagDimension, Vec<String>>,
}

struct Inner {
    workflow: Workflow<FileJournal>,
    snapshot_path: Option<PathBuf>,
    snapshot_every: u64,
    since_snapshot: u64,
}

pub struct Service {
    inner: Mutex<Inner>,
    videos: BTreeMap<String, VideoRecord>,
    media_url: String,
    clock: Clock,
}

impl Service {
    /// Restore the workflow for `queue` from the configured snapshot and
    /// log, then open the log for appending.
    pub fn open(queue: Vec<QueueEntry>, videos: Vec<VideoRecord>, cfg: &ServiceConfig, clock: Clock) -> Result<Self> {
        let base = match cfg.snapshot_path.as_ref().map(load_snapshot).transpose()?.flatten() {
            Some(state) => state,
            None => WorkflowState::new(queue, cfg.lease_ms)?,
        };
        let events = read_events(&cfg.log_path)?;
        let state = base.replay(&events)?;
        tracing::info!(events = events.len(), last_seq = state.last_seq(), "workflow restored");
        let journal = FileJournal::open(&cfg.log_path)?;
        Ok(Service {
            inner: Mutex::new(Inner {
                workflow: Workflow::new(state, journal),
                snapshot_path: cfg.snapshot_path.clone(),
                snapshot_every: cfg.snapshot_every.max(1),
                since_snapshot: 0,
            }),
            videos: videos.into_iter().map(|v| (v.id.clone(), v)).collect(),
            media_url: cfg.media_url.clone(),
            clock,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic while holding the lock cannot leave the workflow half
        // applied: events are checked before they are journaled.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn state(&self) -> WorkflowState {
        self.lock().workflow.state().clone()
    }

    fn view(&self, item: AnnotationItem) -> ItemView {
        let video = self.videos.get(&item.video_id);
        ItemView {
            title: video.map(|v| v.title.clone()).unwrap_or_default(),
            duration_s: video.map_or(0.0, |v| v.duration_s),
            media_url: self.media_url.replace("{id}", &item.video_id),
            item,
        }
    }

    fn after_commit(inner: &mut Inner) -> Result<()> {
        inner.since_snapshot += 1;
        if inner.since_snapshot < inner.snapshot_every {
            return Ok(());
        }
        if let Some(path) = &inner.snapshot_path {
            save_snapshot(inner.workflow.state(), path)?;
        }
        inner.since_snapshot = 0;
        Ok(())
    }

    pub fn next_item(&self, annotator: &str) -> Result<Option<ItemView>> {
        if annotator.trim().is_empty() {
            return Err(Error::Invalid("annotator id is empty".into()));
        }
        let mut inner = self.lock();
        let now = (self.clock)();
        let item = inner.workflow.next_item(annotator, now)?;
        if item.is_some() {
            Self::after_commit(&mut inner)?;
        }
        Ok(item.map(|it| self.view(it)))
    }

    pub fn submit_step(&self, video_id: &str, req: StepRequest) -> Result<StepResponse> {
        let mut inner = self.lock();
        let now = (self.clock)();
        let out = inner.workflow.submit_step(&req.annotator, video_id, req.step, now)?;
        Self::after_commit(&mut inner)?;
        Ok(StepResponse {
            item: self.view(out.item),
            warnings: out.warnings,
        })
    }

    pub fn review(&self, video_id: &str, req: ReviewRequest) -> Result<ItemView> {
        let mut inner = self.lock();
        let now = (self.clock)();
        let item = inner
            .workflow
            .review(&req.reviewer, video_id, req.fixes, req.translations, now)?;
        Self::after_commit(&mut inner)?;
        Ok(self.view(item))
    }

    pub fn item(&self, video_id: &str) -> Result<ItemView> {
        let item = self
            .lock()
            .workflow
            .state()
            .item(video_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("video {video_id}")))?;
        Ok(self.view(item))
    }

    pub fn stats(&self) -> StatsView {
        let inner = self.lock();
        let state = inner.workflow.state();
        let mut labels: BTreeMap<TagDimension, BTreeSet<String>> = BTreeMap::new();
        for it in state.items() {
            if matches!(it.state, ItemState::Annotated | ItemState::Reviewed) {
                for dim in TagDimension::ALL {
                    labels
                        .entry(dim)
                        .or_default()
                        .extend(it.draft.labels_of(dim, Lang::Zh).iter().cloned());
                }
            }
        }
        StatsView {
            queue: state.stats((self.clock)()),
            labels: labels
                .into_iter()
                .map(|(d, s)| (d, s.into_iter().collect()))
                .collect(),
        }
    }

    /// Reviewed ground truth as JSON lines, ending with a
    /// `{"trailer": ...}` line.
    pub fn export_lines(&self) -> Result<String> {
        let (records, trailer) = self.lock().workflow.state().export();
        format_export(&records, &trailer)
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/api/queue/next", get(next_handler))
            .route("/api/items/{video_id}", get(item_handler))
            .route("/api/items/{video_id}/step", post(step_handler))
            .route("/api/items/{video_id}/review", post(review_handler))
            .route("/api/export", get(export_handler))
            .route("/api/stats", get(stats_handler))
            .with_state(self)
    }
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Workflow(_) => StatusCode::CONFLICT,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Invalid(_) | Error::Parse { .. } | Error::Empty(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

type Shared = State<Arc<Service>>;

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_handler(State(svc): Shared, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    Ok(match svc.next_item(&q.annotator)? {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn item_handler(State(svc): Shared, Path(id): Path<String>) -> Result<Json<ItemView>, ApiError> {
    Ok(Json(svc.item(&id)?))
}

async fn step_handler(
    State(svc): Shared,
    Path(id): Path<String>,
    Json(req): Json<StepRequest>,
) -> Result<Json<StepResponse>, ApiError> {
    Ok(Json(svc.submit_step(&id, req)?))
}

async fn review_handler(
    State(svc): Shared,
    Path(id): Path<String>,
    Json(req): Json<ReviewRequest>,
) -> Result<Json<ItemView>, ApiError> {
    Ok(Json(svc.review(&id, req)?))
}

async fn export_handler(State(svc): Shared) -> Result<Response, ApiError> {
    let body = svc.export_lines()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn stats_handler(State(svc): Shared) -> Json<StatsView> {
    Json(svc.stats())
}

/// Serve until Ctrl-C.
pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
