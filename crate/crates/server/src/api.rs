//! REST routes. Every body is canonical JSON; errors are `{code, message}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use discover_core::canonical::to_canonical_vec;
use discover_core::model::{Annotation, AnnotationKey, Scheme, SchemeKind, Session};
use discover_core::search::{search_session, SearchError};
use discover_core::stats::{cohen_kappa, cronbach_alpha, pearson_tracks, spearman_tracks, StatsError};
use discover_core::storage::{AnnotationDocument, StorageError, StreamHeader, Store};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::assistant::{render_context, Assistant, AssistantError};
use crate::cml::{apply_review, loop_session, CmlServiceError, LoopRequest, ReviewRequest};
use crate::jobs::{JobError, JobOutcome, JobQueue, ModuleDescriptor, SlotPayload, SubmitRequest};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub queue: Arc<JobQueue>,
    pub assistant: Arc<Assistant>,
    /// Bearer token every request must carry, when set.
    pub token: Option<Arc<str>>,
    /// Directory served for paths no route matches, e.g. a browser client.
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.into(),
            message: self.message,
        };
        canonical(self.status, &body)
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            StorageError::UnknownDataset(_) => (S::NOT_FOUND, "unknown_dataset"),
            StorageError::UnknownSession(_) => (S::NOT_FOUND, "unknown_session"),
            StorageError::UnknownScheme(_) => (S::NOT_FOUND, "unknown_scheme"),
            StorageError::NotFound(_) => (S::NOT_FOUND, "not_found"),
            StorageError::Conflict(_) => (S::CONFLICT, "conflict"),
            StorageError::Invalid(_) => (S::UNPROCESSABLE_ENTITY, "invalid"),
            StorageError::Malformed(_) => (S::BAD_REQUEST, "malformed"),
            StorageError::Model(_) => (S::BAD_REQUEST, "invalid"),
            StorageError::Stream(_) => (S::BAD_REQUEST, "invalid_stream"),
            StorageError::Io(_) => (S::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            JobError::Storage(_) => {
                let JobError::Storage(inner) = e else { unreachable!() };
                return inner.into();
            }
            JobError::InvalidDescriptor(_) => (S::BAD_REQUEST, "invalid_descriptor"),
            JobError::Conflict(_) => (S::CONFLICT, "conflict"),
            JobError::UnknownModule(_) => (S::NOT_FOUND, "unknown_module"),
            JobError::UnknownOption(_) => (S::BAD_REQUEST, "unknown_option"),
            JobError::OptionType { .. } => (S::BAD_REQUEST, "option_type"),
            JobError::Unresolvable { .. } => (S::UNPROCESSABLE_ENTITY, "unresolvable"),
            JobError::InvalidOutput(_) => (S::UNPROCESSABLE_ENTITY, "invalid_output"),
            JobError::NotFound(_) => (S::NOT_FOUND, "not_found"),
            JobError::StaleLease(_) => (S::CONFLICT, "stale_lease"),
            JobError::InvalidLease | JobError::InvalidProgress(_) => (S::BAD_REQUEST, "bad_request"),
            JobError::Sampling(_) => (S::UNPROCESSABLE_ENTITY, "unresolvable"),
            JobError::Journal(_) => (S::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            SearchError::Storage(_) => {
                let SearchError::Storage(inner) = e else { unreachable!() };
                return inner.into();
            }
            SearchError::Syntax { .. } | SearchError::DuplicateModifier { .. } => (S::BAD_REQUEST, "syntax_error"),
            SearchError::Unresolvable(_) => (S::UNPROCESSABLE_ENTITY, "unresolvable"),
            SearchError::UnsupportedTier(_) | SearchError::UnsupportedScheme(_) => (S::UNPROCESSABLE_ENTITY, "unsupported"),
            SearchError::Model(_) => (S::BAD_REQUEST, "invalid"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<AssistantError> for ApiError {
    fn from(e: AssistantError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            AssistantError::UnknownProvider(_) => (S::NOT_FOUND, "unknown_provider"),
            AssistantError::Timeout(_) => (S::GATEWAY_TIMEOUT, "provider_timeout"),
            AssistantError::Provider { .. } => (S::BAD_GATEWAY, "provider_error"),
            AssistantError::Config(_) => (S::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StatsError> for ApiError {
    fn from(e: StatsError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "agreement", e.to_string())
    }
}

impl From<CmlServiceError> for ApiError {
    fn from(e: CmlServiceError) -> Self {
        match e {
            CmlServiceError::Storage(inner) => inner.into(),
            e => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "cml", e.to_string()),
        }
    }
}

fn canonical<T: Serialize + ?Sized>(status: StatusCode, value: &T) -> Response {
    match to_canonical_vec(value) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn ok<T: Serialize + ?Sized>(value: &T) -> Response {
    canonical(StatusCode::OK, value)
}

fn created<T: Serialize + ?Sized>(value: &T) -> Response {
    canonical(StatusCode::CREATED, value)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

type ApiResult = Result<Response, ApiError>;

/// Runs store-bound work off the async executor.
async fn blocking<F>(f: F) -> ApiResult
where
    F: FnOnce() -> ApiResult + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())))
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/datasets", get(list_datasets).post(create_dataset))
        .route("/sessions", get(get_sessions).post(add_session))
        .route("/schemes", get(get_schemes).post(add_scheme))
        .route("/annotations", get(get_annotations).post(save_annotation))
        .route("/annotations/import", post(import_annotation))
        .route("/streams", get(get_streams).post(put_stream))
        .route("/modules", get(list_modules))
        .route("/modules/register", post(register_module))
        .route("/jobs", get(list_jobs).post(submit_job))
        .route("/jobs/lease", post(lease_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/progress", post(job_progress))
        .route("/jobs/{id}/finish", post(finish_job))
        .route("/search", post(search))
        .route("/agreement", post(agreement))
        .route("/cml/loop", post(cml_loop))
        .route("/cml/review", post(cml_review))
        .route("/assistant/providers", get(list_providers))
        .route("/assistant/chat", post(chat))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    let static_dir = state.static_dir.clone();
    let app = Router::new()
        .route("/health", get(|| async { ok(&json!({"status": "ok"})) }))
        .merge(api);
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") }),
    };
    app.with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn list_datasets(State(s): State<AppState>) -> ApiResult {
    blocking(move || Ok(ok(&s.store.list_datasets()?))).await
}

#[derive(Deserialize)]
struct NameBody {
    name: String,
}

async fn create_dataset(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: NameBody = parse(&body)?;
    blocking(move || {
        s.store.create_dataset(&b.name)?;
        Ok(created(&json!({"name": b.name})))
    })
    .await
}

#[derive(Deserialize)]
struct SessionQuery {
    dataset: String,
    name: Option<String>,
}

async fn get_sessions(State(s): State<AppState>, Query(q): Query<SessionQuery>) -> ApiResult {
    blocking(move || match q.name {
        Some(name) => Ok(ok(&s.store.get_session(&q.dataset, &name)?)),
        None => Ok(ok(&s.store.list_sessions(&q.dataset)?)),
    })
    .await
}

async fn add_session(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let session: Session = parse(&body)?;
    blocking(move || {
        s.store.add_session(&session)?;
        Ok(created(&session))
    })
    .await
}

async fn get_schemes(State(s): State<AppState>, Query(q): Query<SessionQuery>) -> ApiResult {
    blocking(move || match q.name {
        Some(name) => Ok(ok(&s.store.get_scheme(&q.dataset, &name)?)),
        None => Ok(ok(&s.store.list_schemes(&q.dataset)?)),
    })
    .await
}

#[derive(Deserialize)]
struct SchemeBody {
    dataset: String,
    scheme: Scheme,
}

async fn add_scheme(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: SchemeBody = parse(&body)?;
    blocking(move || {
        s.store.add_scheme(&b.dataset, &b.scheme)?;
        Ok(created(&b.scheme))
    })
    .await
}

#[derive(Deserialize)]
struct AnnotationQuery {
    dataset: String,
    session: String,
    role: Option<String>,
    scheme: Option<String>,
    annotator: Option<String>,
}

/// With all key fields: the stored document. Otherwise: the matching keys.
async fn get_annotations(State(s): State<AppState>, Query(q): Query<AnnotationQuery>) -> ApiResult {
    blocking(move || {
        if let (Some(role), Some(scheme), Some(annotator)) = (&q.role, &q.scheme, &q.annotator) {
            let key = AnnotationKey::new(&q.dataset, &q.session, role, scheme, annotator);
            return Ok(ok(&s.store.load_document(&key)?));
        }
        let keys: Vec<AnnotationKey> = s
            .store
            .list_annotations(&q.dataset, &q.session)?
            .into_iter()
            .filter(|k| q.role.as_ref().is_none_or(|r| r == &k.role))
            .filter(|k| q.scheme.as_ref().is_none_or(|x| x == &k.scheme))
            .filter(|k| q.annotator.as_ref().is_none_or(|a| a == &k.annotator))
            .collect();
        Ok(ok(&keys))
    })
    .await
}

#[derive(Deserialize)]
struct SaveBody {
    #[serde(flatten)]
    annotation: Annotation,
    /// Revision the editor started from; 0 when creating.
    #[serde(default)]
    expected_revision: Option<u64>,
}

async fn save_annotation(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: SaveBody = parse(&body)?;
    blocking(move || {
        let revision = s.store.save_annotation_at(&b.annotation, b.expected_revision)?;
        Ok(created(&json!({"key": b.annotation.key, "revision": revision})))
    })
    .await
}

/// Stores an exported document. Importing a document whose body equals the
/// stored one changes nothing, so export/import/export is a fixed point.
async fn import_annotation(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let doc = AnnotationDocument::from_bytes(&body)?;
    blocking(move || {
        let key = doc.key.clone();
        let stored = s.store.get_scheme(&key.dataset, &key.scheme)?;
        if stored != doc.scheme_def {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                format!("scheme_def of {key} differs from the dataset's scheme {}", stored.name()),
            ));
        }
        match s.store.load_document(&key) {
            Ok(current) if current.body == doc.body => {
                return Ok(ok(&json!({"key": key, "revision": current.revision})));
            }
            Ok(_) | Err(StorageError::NotFound(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let revision = s.store.save_annotation(&doc.into_annotation())?;
        Ok(created(&json!({"key": key, "revision": revision})))
    })
    .await
}

#[derive(Deserialize)]
struct StreamQuery {
    dataset: String,
    session: String,
    name: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct StreamBody {
    dataset: String,
    session: String,
    name: String,
    header: StreamHeader,
    /// Base64 of the little-endian f32 rows.
    data: String,
}

async fn get_streams(State(s): State<AppState>, Query(q): Query<StreamQuery>) -> ApiResult {
    blocking(move || match q.name {
        None => Ok(ok(&s.store.list_streams(&q.dataset, &q.session)?)),
        Some(name) => {
            let (header, frames) = s.store.get_stream(&q.dataset, &q.session, &name)?;
            let SlotPayload::Stream { header, data } = SlotPayload::stream(header, &frames) else {
                unreachable!()
            };
            Ok(ok(&StreamBody {
                dataset: q.dataset,
                session: q.session,
                name,
                header,
                data,
            }))
        }
    })
    .await
}

async fn put_stream(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: StreamBody = parse(&body)?;
    blocking(move || {
        let frames = SlotPayload::stream_frames(&b.data).map_err(ApiError::bad_request)?;
        s.store.put_stream(&b.dataset, &b.session, &b.name, &b.header, &frames)?;
        Ok(created(&json!({"name": b.name, "header": b.header})))
    })
    .await
}

async fn list_modules(State(s): State<AppState>) -> ApiResult {
    Ok(ok(&s.queue.modules()))
}

async fn register_module(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let d: ModuleDescriptor = parse(&body)?;
    blocking(move || Ok(ok(&s.queue.register_module(d)?))).await
}

async fn list_jobs(State(s): State<AppState>) -> ApiResult {
    blocking(move || Ok(ok(&s.queue.list()?))).await
}

async fn submit_job(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: SubmitRequest = parse(&body)?;
    blocking(move || Ok(created(&s.queue.submit(req)?))).await
}

async fn get_job(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    blocking(move || Ok(ok(&s.queue.get(id)?))).await
}

#[derive(Deserialize)]
struct LeaseBody {
    worker_id: String,
    #[serde(default)]
    modules: Vec<String>,
    #[serde(default)]
    lease_ms: Option<u64>,
}

/// `{"job": null}` when nothing is queued; otherwise the job and the data
/// of its inputs.
async fn lease_job(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: LeaseBody = parse(&body)?;
    blocking(move || match s.queue.lease(&b.worker_id, &b.modules, b.lease_ms)? {
        None => Ok(ok(&json!({"job": null}))),
        Some(job) => match s.queue.input_data(&job) {
            Ok(inputs) => Ok(ok(&json!({"job": job, "inputs": inputs}))),
            Err(e) => {
                let lease_id = job.lease.as_ref().map_or(0, |l| l.lease_id);
                s.queue.finish(
                    job.id,
                    &b.worker_id,
                    lease_id,
                    JobOutcome::Failed {
                        message: format!("inputs unavailable: {e}"),
                    },
                )?;
                Ok(ok(&json!({"job": null})))
            }
        },
    })
    .await
}

#[derive(Deserialize)]
struct ProgressBody {
    worker_id: String,
    lease_id: u64,
    progress: f64,
    #[serde(default)]
    message: Option<String>,
}

async fn job_progress(State(s): State<AppState>, Path(id): Path<u64>, body: Bytes) -> ApiResult {
    let b: ProgressBody = parse(&body)?;
    blocking(move || Ok(ok(&s.queue.progress(id, &b.worker_id, b.lease_id, b.progress, b.message)?))).await
}

#[derive(Deserialize)]
struct FinishBody {
    worker_id: String,
    lease_id: u64,
    #[serde(flatten)]
    outcome: JobOutcome,
}

async fn finish_job(State(s): State<AppState>, Path(id): Path<u64>, body: Bytes) -> ApiResult {
    let b: FinishBody = parse(&body)?;
    blocking(move || Ok(ok(&s.queue.finish(id, &b.worker_id, b.lease_id, b.outcome)?))).await
}

#[derive(Deserialize)]
struct SearchBody {
    dataset: String,
    session: String,
    query: String,
    frame_ms: u64,
}

async fn search(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: SearchBody = parse(&body)?;
    blocking(move || Ok(ok(&search_session(&s.store, &b.dataset, &b.session, &b.query, b.frame_ms)?))).await
}

#[derive(Deserialize)]
struct KeyRef {
    role: String,
    scheme: String,
    annotator: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum MeasureName {
    Kappa,
    Alpha,
    Pearson,
    Spearman,
}

#[derive(Deserialize)]
struct AgreementBody {
    measure: MeasureName,
    dataset: String,
    session: String,
    annotations: Vec<KeyRef>,
    #[serde(default)]
    frame_ms: Option<u64>,
}

async fn agreement(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: AgreementBody = parse(&body)?;
    blocking(move || {
        let mut loaded = Vec::new();
        for k in &b.annotations {
            let key = AnnotationKey::new(&b.dataset, &b.session, &k.role, &k.scheme, &k.annotator);
            loaded.push(s.store.load_annotation(&key)?.0);
        }
        let pair = || -> Result<(&Annotation, &Annotation), ApiError> {
            match loaded.as_slice() {
                [a, b] => Ok((a, b)),
                _ => Err(ApiError::bad_request("this measure compares exactly two annotations")),
            }
        };
        let result = match b.measure {
            MeasureName::Kappa => {
                let (x, y) = pair()?;
                let session = s.store.get_session(&b.dataset, &b.session)?;
                cohen_kappa(x, y, &session, b.frame_ms.unwrap_or(40))?
            }
            MeasureName::Pearson => {
                let (x, y) = pair()?;
                pearson_tracks(x.track().map_err(StatsError::from)?, y.track().map_err(StatsError::from)?)?
            }
            MeasureName::Spearman => {
                let (x, y) = pair()?;
                spearman_tracks(x.track().map_err(StatsError::from)?, y.track().map_err(StatsError::from)?)?
            }
            MeasureName::Alpha => {
                let tracks = loaded
                    .iter()
                    .map(|a| a.track().cloned().map_err(StatsError::from))
                    .collect::<Result<Vec<_>, _>>()?;
                cronbach_alpha(&tracks)?
            }
        };
        Ok(ok(&result))
    })
    .await
}

async fn cml_loop(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: LoopRequest = parse(&body)?;
    blocking(move || Ok(ok(&loop_session(&s.store, &req)?))).await
}

async fn cml_review(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: ReviewRequest = parse(&body)?;
    blocking(move || Ok(ok(&apply_review(&s.store, &req)?))).await
}

async fn list_providers(State(s): State<AppState>) -> ApiResult {
    let names: Vec<&str> = s.assistant.providers().iter().map(|p| p.name.as_str()).collect();
    Ok(ok(&names))
}

#[derive(Deserialize)]
struct SessionRef {
    dataset: String,
    session: String,
}

#[derive(Deserialize)]
struct ChatBody {
    session: String,
    provider: String,
    #[serde(default)]
    context_aware: bool,
    message: String,
    #[serde(default)]
    session_ref: Option<SessionRef>,
}

async fn chat(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let b: ChatBody = parse(&body)?;
    let context = if b.context_aware {
        let store = s.store.clone();
        let session_ref = b.session_ref;
        let transcripts = tokio::task::spawn_blocking(move || -> Result<Vec<Annotation>, StorageError> {
            let Some(r) = session_ref else {
                return Ok(Vec::new());
            };
            let mut out = Vec::new();
            for key in store.list_annotations(&r.dataset, &r.session)? {
                if store.get_scheme(&key.dataset, &key.scheme)?.kind() == SchemeKind::Free {
                    out.push(store.load_annotation(&key)?.0);
                }
            }
            Ok(out)
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
        Some(render_context(&transcripts))
    } else {
        None
    };
    let reply = s.assistant.chat(&b.session, &b.provider, &b.message, context.as_deref()).await?;
    Ok(ok(&reply))
}
