//! HTTP/JSON API over one labeling session.
//!
//! Every response is an envelope `{ok, data | error{code, message},
//! session_sequence}`. Mutations accept an optional `expected_sequence`;
//! a mismatch is rejected with `stale_sequence` so a retried request cannot
//! apply twice.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use cvil_core::classifier::ClassifierError;
use cvil_core::dataset::{write_export_csv, DatasetError, LedgerError};
use cvil_core::density::RangeSelection;
use cvil_core::session::{BatchLabelAction, RetrainJob, Session, SessionError, Status};
use cvil_core::{ClassId, Measure};

pub const DEFAULT_LIMIT: usize = 50;

/// Shared state behind the router.
pub struct AppState {
    session: RwLock<Session>,
    images_dir: Option<PathBuf>,
    save_path: Option<PathBuf>,
    dataset_path: Option<String>,
    job: Mutex<JobState>,
}

#[derive(Debug, Clone, Default, Serialize)]
struct JobState {
    running: Option<u64>,
    last_error: Option<String>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        Self {
            session: RwLock::new(session),
            images_dir: None,
            save_path: None,
            dataset_path: None,
            job: Mutex::new(JobState::default()),
        }
    }

    pub fn with_images(mut self, dir: PathBuf) -> Self {
        self.images_dir = Some(dir);
        self
    }

    /// Rewrites the save file after every committed action.
    pub fn with_save_path(mut self, path: PathBuf, dataset_path: Option<String>) -> Self {
        self.save_path = Some(path);
        self.dataset_path = dataset_path;
        self
    }

    pub fn session(&self) -> &RwLock<Session> {
        &self.session
    }

    fn persist(&self, session: &Session) -> Result<(), ApiError> {
        let Some(path) = &self.save_path else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            session
                .save(file, self.dataset_path.as_deref())
                .map_err(std::io::Error::other)?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| ApiError::internal(format!("saving session: {e}")))
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/summary", get(summary))
        .route("/api/status", get(status))
        .route("/api/stats", get(stats))
        .route("/api/export", get(export))
        .route("/api/classes/{c}/density", get(density))
        .route("/api/classes/{c}/preview", get(preview))
        .route("/api/classes/{c}/hover", get(hover))
        .route("/api/labels/instance", post(label_instance))
        .route("/api/labels/batch", post(label_batch))
        .route("/api/retrain", post(retrain))
        .route("/api/measure", post(set_measure))
        .route("/images/{id}", get(image))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    sequence: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            sequence: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn at(mut self, sequence: u64) -> Self {
        self.sequence = Some(sequence);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "ok": false,
            "error": { "code": self.code, "message": self.message },
            "session_sequence": self.sequence,
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError as E;
        let (status, code) = match &e {
            E::Busy => (StatusCode::CONFLICT, "busy"),
            E::Untrained => (StatusCode::CONFLICT, "untrained"),
            E::AlreadyTrained => (StatusCode::CONFLICT, "already_trained"),
            E::NoJob => (StatusCode::CONFLICT, "no_job"),
            E::UnknownId(_) => (StatusCode::NOT_FOUND, "unknown_id"),
            E::UnknownClass { .. } => (StatusCode::NOT_FOUND, "unknown_class"),
            E::ClassMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "class_mismatch"),
            E::Ledger(LedgerError::ForbiddenTransition(_)) => (StatusCode::CONFLICT, "forbidden_transition"),
            E::Ledger(_) | E::Density(_) | E::Measure(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            E::Classifier(ClassifierError::Untrained | ClassifierError::EmptyTrainingSet) => {
                (StatusCode::CONFLICT, "no_labels")
            }
            E::Classifier(ClassifierError::MissingInstanceLabels(_)) => {
                (StatusCode::CONFLICT, "missing_instance_labels")
            }
            E::Dataset(DatasetError::MissingPredictions { .. }) => (StatusCode::CONFLICT, "untrained"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(sequence: u64, data: impl Serialize) -> ApiResult {
    let body = json!({ "ok": true, "data": data, "session_sequence": sequence });
    Ok(Json(body).into_response())
}

fn check_sequence(session: &Session, expected: Option<u64>) -> Result<(), ApiError> {
    match expected {
        Some(seq) if seq != session.sequence() => Err(ApiError::new(
            StatusCode::CONFLICT,
            "stale_sequence",
            format!("expected sequence {seq}, session is at {}", session.sequence()),
        )),
        _ => Ok(()),
    }
}

fn class_param(raw: &str) -> Result<ClassId, ApiError> {
    raw.parse::<u32>()
        .map(ClassId)
        .map_err(|_| ApiError::bad_request(format!("class must be a non-negative integer, got {raw:?}")))
}

#[derive(Serialize)]
struct PreviewItem<'a> {
    id: &'a str,
    value: f64,
    image_url: Option<String>,
}

fn preview_payload(session: &Session, indices: &[usize], total: usize) -> Value {
    let scores = session.scores().expect("previews need scores");
    let dataset = session.dataset();
    let items: Vec<PreviewItem> = indices
        .iter()
        .map(|&i| PreviewItem {
            id: dataset.id(i),
            value: scores.values[i],
            image_url: dataset.image_ref(i).map(|_| format!("/images/{}", dataset.id(i))),
        })
        .collect();
    json!({ "items": items, "total": total })
}

async fn summary(State(state): State<Shared>) -> ApiResult {
    let s = state.session.read();
    let dataset = s.dataset();
    ok(
        s.sequence(),
        json!({
            "instances": dataset.len(),
            "dim": dataset.dim(),
            "classes": dataset.schema().names(),
            "measure": s.measure(),
            "has_images": (0..dataset.len()).any(|i| dataset.image_ref(i).is_some()),
            "config": s.config(),
        }),
    )
}

async fn status(State(state): State<Shared>) -> ApiResult {
    let s = state.session.read();
    let job = state.job.lock().clone();
    ok(
        s.sequence(),
        json!({
            "trained": s.is_trained(),
            "status": s.status(),
            "measure": s.measure(),
            "job": job.running.map(|seed| json!({ "seed": seed })),
            "last_error": job.last_error,
            "last_training": s.last_training(),
        }),
    )
}

async fn stats(State(state): State<Shared>) -> ApiResult {
    let s = state.session.read();
    let stats = s.class_stats();
    let names = s.dataset().schema().names();
    let per_class: Vec<Value> = stats
        .per_class
        .iter()
        .zip(names)
        .enumerate()
        .map(|(c, (counts, name))| {
            json!({
                "class_id": c,
                "name": name,
                "instance": counts.instance,
                "batch": counts.batch,
                "unlabeled": counts.unlabeled,
            })
        })
        .collect();
    ok(
        s.sequence(),
        json!({
            "per_class": per_class,
            "unpredicted": stats.unpredicted,
            "labels": s.ledger().counts(),
        }),
    )
}

async fn export(State(state): State<Shared>) -> ApiResult {
    let s = state.session.read();
    let records = s.export().map_err(|e| ApiError::from(e).at(s.sequence()))?;
    let mut body = Vec::new();
    write_export_csv(&records, &mut body).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_owned()),
            (header::HeaderName::from_static("x-session-sequence"), s.sequence().to_string()),
        ],
        body,
    )
        .into_response())
}

async fn density(State(state): State<Shared>, Path(c): Path<String>) -> ApiResult {
    let class = class_param(&c)?;
    let s = state.session.read();
    let curve = s.density(class).map_err(|e| ApiError::from(e).at(s.sequence()))?;
    ok(s.sequence(), curve)
}

#[derive(Deserialize)]
struct PreviewQuery {
    lo: f64,
    hi: f64,
    limit: Option<usize>,
}

async fn preview(
    State(state): State<Shared>,
    Path(c): Path<String>,
    query: Result<Query<PreviewQuery>, QueryRejection>,
) -> ApiResult {
    let class = class_param(&c)?;
    let Query(q) = query?;
    let s = state.session.read();
    let selection = RangeSelection {
        class_id: class,
        lo: q.lo,
        hi: q.hi,
    };
    let found = s
        .preview(&selection, q.limit.unwrap_or(DEFAULT_LIMIT))
        .map_err(|e| ApiError::from(e).at(s.sequence()))?;
    ok(s.sequence(), preview_payload(&s, &found.indices, found.total))
}

#[derive(Deserialize)]
struct HoverQuery {
    value: f64,
    limit: Option<usize>,
}

async fn hover(
    State(state): State<Shared>,
    Path(c): Path<String>,
    query: Result<Query<HoverQuery>, QueryRejection>,
) -> ApiResult {
    let class = class_param(&c)?;
    let Query(q) = query?;
    let s = state.session.read();
    let found = s
        .hover(class, q.value, q.limit.unwrap_or(DEFAULT_LIMIT))
        .map_err(|e| ApiError::from(e).at(s.sequence()))?;
    ok(s.sequence(), preview_payload(&s, &found.indices, found.total))
}

#[derive(Deserialize)]
struct InstanceLabelBody {
    id: String,
    class: u32,
    expected_sequence: Option<u64>,
}

async fn label_instance(State(state): State<Shared>, body: Result<Json<InstanceLabelBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let mut s = state.session.write();
    check_sequence(&s, body.expected_sequence).map_err(|e| e.at(s.sequence()))?;
    s.label_instance(&body.id, ClassId(body.class))
        .map_err(|e| ApiError::from(e).at(s.sequence()))?;
    state.persist(&s)?;
    ok(s.sequence(), json!({ "id": body.id, "class": body.class }))
}

#[derive(Deserialize)]
struct BatchLabelBody {
    class: u32,
    lo: f64,
    hi: f64,
    target_class: u32,
    #[serde(default, rename = "override")]
    override_mismatch: bool,
    expected_sequence: Option<u64>,
}

async fn label_batch(State(state): State<Shared>, body: Result<Json<BatchLabelBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let action = BatchLabelAction {
        selection: RangeSelection {
            class_id: ClassId(body.class),
            lo: body.lo,
            hi: body.hi,
        },
        target_class: ClassId(body.target_class),
        override_mismatch: body.override_mismatch,
    };
    let mut s = state.session.write();
    check_sequence(&s, body.expected_sequence).map_err(|e| e.at(s.sequence()))?;
    let labeled = s.label_batch(&action).map_err(|e| ApiError::from(e).at(s.sequence()))?;
    state.persist(&s)?;
    ok(s.sequence(), json!({ "labeled": labeled }))
}

#[derive(Deserialize, Default)]
struct RetrainBody {
    #[serde(default)]
    seed: u64,
    expected_sequence: Option<u64>,
}

async fn retrain(State(state): State<Shared>, body: Result<Json<RetrainBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let (job, sequence) = {
        let mut s = state.session.write();
        check_sequence(&s, body.expected_sequence).map_err(|e| e.at(s.sequence()))?;
        let job = s.begin_retrain(body.seed).map_err(|e| ApiError::from(e).at(s.sequence()))?;
        (job, s.sequence())
    };
    *state.job.lock() = JobState {
        running: Some(body.seed),
        last_error: None,
    };
    spawn_retrain(Arc::clone(&state), job);
    let response = json!({ "ok": true, "data": { "job": { "seed": body.seed } }, "session_sequence": sequence });
    Ok((StatusCode::ACCEPTED, Json(response)).into_response())
}

fn spawn_retrain(state: Shared, job: RetrainJob) {
    tokio::task::spawn_blocking(move || {
        let outcome = job.run();
        let mut s = state.session.write();
        let result = s.finish_retrain(outcome).map(|_| ());
        let persisted = match &result {
            Ok(()) => state.persist(&s).map_err(|e| e.message),
            Err(_) => Ok(()),
        };
        let mut job = state.job.lock();
        job.running = None;
        job.last_error = result.map_err(|e| e.to_string()).and(persisted).err();
    });
}

#[derive(Deserialize)]
struct MeasureBody {
    measure: Measure,
    expected_sequence: Option<u64>,
}

async fn set_measure(State(state): State<Shared>, body: Result<Json<MeasureBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let mut s = state.session.write();
    check_sequence(&s, body.expected_sequence).map_err(|e| e.at(s.sequence()))?;
    s.set_measure(body.measure)
        .map_err(|e| ApiError::from(e).at(s.sequence()))?;
    state.persist(&s)?;
    ok(s.sequence(), json!({ "measure": body.measure }))
}

fn content_type(path: &std::path::Path) -> &'static str {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn image(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let path = {
        let s = state.session.read();
        let dataset = s.dataset();
        let index = dataset
            .index_of(&id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_id", format!("unknown instance id {id:?}")))?;
        match (&state.images_dir, dataset.image_ref(index)) {
            (Some(dir), Some(file)) => dir.join(file),
            _ => {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    "no_image",
                    format!("instance {id:?} has no image"),
                ))
            }
        }
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "no_image", format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

/// Blocks until a running retrain has been installed; for tests and tools.
pub async fn wait_idle(state: &AppState) {
    while state.session.read().status() == Status::Training {
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
}
