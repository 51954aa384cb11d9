//! Local HTTP service: flow storage, planning, runs with server-sent
//! progress events, inspection data, CSV export and share links.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tower_http::services::ServeDir;

use crate::analysis::{group_responses, pivot_table};
use crate::engine::{Dispatcher, ExecuteError, ProgressEvent, ResponseCache};
use crate::flow::{load_flow, save_flow, validate_flow, FlowDocument, FlowError};
use crate::workspace::{default_export_node, RunReport, RunRequest, Workspace, WorkspaceError};

pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8400;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Refuses non-loopback hosts unless `allow_remote` is set.
pub fn check_bind_host(host: &str, allow_remote: bool) -> Result<IpAddr, String> {
    let ip: IpAddr = match host {
        "localhost" => IpAddr::from([127, 0, 0, 1]),
        h => h.parse().map_err(|_| format!("`{h}` is not an IP address"))?,
    };
    if !ip.is_loopback() && !allow_remote {
        return Err(format!(
            "refusing to bind non-loopback address {ip}; pass --allow-remote to expose API keys to the network"
        ));
    }
    Ok(ip)
}

/// Path of the cache directory belonging to a flow file.
pub fn cache_dir_for(flow_path: &Path) -> PathBuf {
    flow_path.with_extension("cache")
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state")]
pub enum RunStatus {
    Running,
    Done { report: RunReport },
    Failed { error: String },
}

/// One run's event log. Subscribers replay it from the start and then
/// follow it live.
struct RunLog {
    events: Mutex<Vec<ProgressEvent>>,
    status: Mutex<RunStatus>,
    version: watch::Sender<u64>,
}

impl RunLog {
    fn new() -> Self {
        RunLog {
            events: Mutex::new(Vec::new()),
            status: Mutex::new(RunStatus::Running),
            version: watch::channel(0).0,
        }
    }

    fn bump(&self) {
        self.version.send_modify(|v| *v += 1);
    }
}

struct FlowSlot {
    workspace: Workspace,
    busy: Arc<AtomicBool>,
}

pub struct AppState {
    dispatcher: Arc<Dispatcher>,
    data_dir: PathBuf,
    static_dir: Option<PathBuf>,
    eval_command: Option<String>,
    flows: Mutex<HashMap<String, Arc<FlowSlot>>>,
    runs: Mutex<HashMap<String, Arc<RunLog>>>,
}

impl AppState {
    pub fn new(dispatcher: Arc<Dispatcher>, data_dir: impl Into<PathBuf>) -> Self {
        AppState {
            dispatcher,
            data_dir: data_dir.into(),
            static_dir: None,
            eval_command: None,
            flows: Mutex::new(HashMap::new()),
            runs: Mutex::new(HashMap::new()),
        }
    }

    /// Directory of built web UI assets served at `/`.
    pub fn with_static_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.static_dir = dir;
        self
    }

    pub fn with_eval_command(mut self, command: Option<String>) -> Self {
        self.eval_command = command;
        self
    }

    fn flow_path(&self, id: &str) -> PathBuf {
        self.data_dir.join(format!("{id}.json"))
    }

    fn share_path(&self, hash: &str) -> PathBuf {
        self.data_dir.join("shares").join(format!("{hash}.json"))
    }

    fn slot(&self, id: &str) -> Result<Arc<FlowSlot>, ApiError> {
        let mut flows = self.flows.lock();
        if let Some(s) = flows.get(id) {
            return Ok(s.clone());
        }
        let cache = ResponseCache::open(cache_dir_for(&self.flow_path(id)))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let workspace = Workspace::new(self.dispatcher.clone(), Arc::new(cache))
            .with_eval_command(self.eval_command.clone());
        let slot = Arc::new(FlowSlot {
            workspace,
            busy: Arc::new(AtomicBool::new(false)),
        });
        flows.insert(id.to_string(), slot.clone());
        Ok(slot)
    }

    fn load(&self, id: &str) -> Result<FlowDocument, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::bad_request(format!("invalid flow id `{id}`")));
        }
        let bytes = std::fs::read(self.flow_path(id))
            .map_err(|_| ApiError::not_found(format!("no flow `{id}`")))?;
        Ok(load_flow(&bytes)?)
    }

    /// Writes a flow without its embedded cache, importing those records
    /// into the flow's cache first.
    fn store(&self, id: &str, mut doc: FlowDocument) -> Result<(), ApiError> {
        let slot = self.slot(id)?;
        slot.workspace
            .import_embedded(&doc)
            .and_then(|_| slot.workspace.cache().flush())
            .map_err(|e| ApiError::internal(e.to_string()))?;
        doc.cache = None;
        std::fs::create_dir_all(&self.data_dir).map_err(|e| ApiError::internal(e.to_string()))?;
        std::fs::write(self.flow_path(id), save_flow(&doc, false))
            .map_err(|e| ApiError::internal(e.to_string()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }

    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl From<FlowError> for ApiError {
    fn from(e: FlowError) -> Self {
        let status = match e {
            FlowError::NoSuchNode(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        let status = match &e {
            WorkspaceError::Flow(FlowError::NoSuchNode(_)) => StatusCode::NOT_FOUND,
            WorkspaceError::Execute(ExecuteError::Cache(_)) | WorkspaceError::Cache(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/flows", get(list_flows).post(create_flow))
        .route("/flows/{id}", get(get_flow).put(put_flow))
        .route("/flows/{id}/validate", get(validate))
        .route("/flows/{id}/plan", post(plan))
        .route("/flows/{id}/run", post(run))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/events", get(run_events))
        .route("/flows/{id}/nodes/{node}/responses", get(responses))
        .route("/flows/{id}/nodes/{node}/grouped", get(grouped))
        .route("/flows/{id}/nodes/{node}/table", get(table))
        .route("/flows/{id}/nodes/{node}/vis", get(vis))
        .route("/flows/{id}/export.csv", get(export))
        .route("/share", post(share))
        .route("/share/{hash}", get(get_share))
        .with_state(state);
    match static_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api,
    }
}

/// Serves on an already bound listener until the process ends.
pub async fn serve_on(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    serve_on(listener, state).await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": VERSION }))
}

async fn list_flows(State(s): Shared) -> ApiResult<Json<Vec<String>>> {
    let mut ids = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&s.data_dir) {
        for e in entries.flatten() {
            let p = e.path();
            if p.extension().is_some_and(|x| x == "json") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    if valid_id(stem) {
                        ids.push(stem.to_string());
                    }
                }
            }
        }
    }
    ids.sort();
    Ok(Json(ids))
}

#[derive(Deserialize)]
struct CreateQuery {
    id: Option<String>,
}

async fn create_flow(State(s): Shared, Query(q): Query<CreateQuery>, body: Bytes) -> ApiResult<Response> {
    let doc = load_flow(&body)?;
    let id = match q.id {
        Some(id) if valid_id(&id) => id,
        Some(id) => return Err(ApiError::bad_request(format!("invalid flow id `{id}`"))),
        None => uuid::Uuid::new_v4().simple().to_string(),
    };
    s.store(&id, doc)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn get_flow(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    Ok(json_bytes(save_flow(&doc, false)))
}

async fn put_flow(State(s): Shared, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Value>> {
    if !valid_id(&id) {
        return Err(ApiError::bad_request(format!("invalid flow id `{id}`")));
    }
    s.store(&id, load_flow(&body)?)?;
    Ok(Json(json!({ "id": id })))
}

async fn validate(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    Ok(Json(validate_flow(&doc)).into_response())
}

async fn plan(State(s): Shared, UrlPath(id): UrlPath<String>, Json(req): Json<RunRequest>) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let report = s.slot(&id)?.workspace.plan(&doc, &req).await?;
    Ok(Json(report).into_response())
}

async fn run(State(s): Shared, UrlPath(id): UrlPath<String>, Json(req): Json<RunRequest>) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let node = doc.node(&req.node_id).ok_or_else(|| FlowError::NoSuchNode(req.node_id.clone()))?;
    if !(node.kind.is_query() || node.kind.is_evaluator()) {
        return Err(WorkspaceError::NotRunnable(req.node_id.clone()).into());
    }
    let report = validate_flow(&doc);
    if !report.is_ok() {
        return Err(WorkspaceError::Invalid(report).into());
    }
    let slot = s.slot(&id)?;
    if slot.busy.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("flow `{id}` already has a run in progress"),
        ));
    }

    let run_id = uuid::Uuid::new_v4().simple().to_string();
    let log = Arc::new(RunLog::new());
    s.runs.lock().insert(run_id.clone(), log.clone());

    let (tx, mut rx) = mpsc::unbounded_channel::<ProgressEvent>();
    let forward = {
        let log = log.clone();
        tokio::spawn(async move {
            while let Some(ev) = rx.recv().await {
                log.events.lock().push(ev);
                log.bump();
            }
        })
    };
    tokio::spawn(async move {
        let result = slot.workspace.run(&doc, &req, Some(&tx)).await;
        drop(tx);
        let _ = forward.await;
        *log.status.lock() = match result {
            Ok(report) => RunStatus::Done { report },
            Err(e) => RunStatus::Failed { error: e.to_string() },
        };
        slot.busy.store(false, Ordering::SeqCst);
        log.bump();
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))).into_response())
}

fn run_log(s: &AppState, id: &str) -> ApiResult<Arc<RunLog>> {
    s.runs
        .lock()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no run `{id}`")))
}

async fn run_status(State(s): Shared, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunStatus>> {
    let status = run_log(&s, &id)?.status.lock().clone();
    Ok(Json(status))
}

/// `progress` events carry a ProgressEvent; the stream ends with one `done`
/// event (a RunReport) or one `failed` event (`{"error": ...}`).
async fn run_events(
    State(s): Shared,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let log = run_log(&s, &id)?;
    let rx = log.version.subscribe();
    let stream = futures::stream::unfold((log, rx, 0usize, false), |(log, mut rx, next, ended)| async move {
        if ended {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let pending = log.events.lock().get(next).cloned();
            if let Some(ev) = pending {
                let event = Event::default().event("progress").json_data(&ev).expect("serializable");
                return Some((Ok(event), (log, rx, next + 1, false)));
            }
            let status = log.status.lock().clone();
            match status {
                RunStatus::Running => {
                    if rx.changed().await.is_err() {
                        return None;
                    }
                }
                RunStatus::Done { report } => {
                    let event = Event::default().event("done").json_data(&report).expect("serializable");
                    return Some((Ok(event), (log, rx, next, true)));
                }
                RunStatus::Failed { error } => {
                    let event = Event::default()
                        .event("failed")
                        .json_data(json!({ "error": error }))
                        .expect("serializable");
                    return Some((Ok(event), (log, rx, next, true)));
                }
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn responses(State(s): Shared, UrlPath((id, node)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let records = s.slot(&id)?.workspace.responses(&doc, &node).await?;
    Ok(Json(records).into_response())
}

#[derive(Deserialize)]
struct GroupQuery {
    #[serde(default)]
    by: Option<String>,
}

async fn grouped(
    State(s): Shared,
    UrlPath((id, node)): UrlPath<(String, String)>,
    Query(q): Query<GroupQuery>,
) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let records = s.slot(&id)?.workspace.responses(&doc, &node).await?;
    let by: Vec<String> = q
        .by
        .map(|b| b.split(',').filter(|v| !v.is_empty()).map(str::to_string).collect())
        .unwrap_or_default();
    Ok(Json(group_responses(&records, &by)).into_response())
}

#[derive(Deserialize)]
struct TableQuery {
    pivot: Option<String>,
}

async fn table(
    State(s): Shared,
    UrlPath((id, node)): UrlPath<(String, String)>,
    Query(q): Query<TableQuery>,
) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let records = s.slot(&id)?.workspace.responses(&doc, &node).await?;
    let pivot = q.pivot.unwrap_or_else(|| crate::analysis::MODEL_DIMENSION.to_string());
    Ok(Json(pivot_table(&records, &pivot)).into_response())
}

#[derive(Deserialize)]
struct VisQuery {
    y: Option<String>,
}

async fn vis(
    State(s): Shared,
    UrlPath((id, node)): UrlPath<(String, String)>,
    Query(q): Query<VisQuery>,
) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let series = s.slot(&id)?.workspace.vis(&doc, &node, q.y.as_deref()).await?;
    Ok(Json(series).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    node: Option<String>,
}

async fn export(State(s): Shared, UrlPath(id): UrlPath<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let doc = s.load(&id)?;
    let node = match q.node.or_else(|| default_export_node(&doc)) {
        Some(n) => n,
        None => return Err(ApiError::bad_request("several nodes hold responses; pass ?node=<id>")),
    };
    let csv = s.slot(&id)?.workspace.export_csv(&doc, &node).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}-{node}.csv\"")),
        ],
        csv,
    )
        .into_response())
}

#[derive(Deserialize)]
struct ShareRequest {
    flow_id: String,
    #[serde(default = "yes")]
    include_cache: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShareBundle {
    pub hash: String,
    pub created_ms: u64,
}

/// Hex SHA-256 of the shared bytes; identical flows share one address.
pub fn share_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

async fn share(State(s): Shared, Json(req): Json<ShareRequest>) -> ApiResult<Json<ShareBundle>> {
    let doc = s.load(&req.flow_id)?;
    let bytes = if req.include_cache {
        s.slot(&req.flow_id)?.workspace.bundle(&doc).await?
    } else {
        save_flow(&doc, false)
    };
    let hash = share_hash(&bytes);
    let path = s.share_path(&hash);
    if !path.exists() {
        let write = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::write(&path, &bytes));
        write.map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let created_ms = std::fs::metadata(&path)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default())
        .as_millis() as u64;
    Ok(Json(ShareBundle { hash, created_ms }))
}

async fn get_share(State(s): Shared, UrlPath(hash): UrlPath<String>) -> ApiResult<Response> {
    if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(ApiError::bad_request("share hash must be 64 hex digits"));
    }
    let bytes = std::fs::read(s.share_path(&hash.to_ascii_lowercase()))
        .map_err(|_| ApiError::not_found(format!("no share `{hash}`")))?;
    Ok(json_bytes(bytes))
}
