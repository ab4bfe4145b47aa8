//! HTTP service: chat sessions over the two-stage pipeline, human override
//! of the selected reply, and pairwise preference annotation.

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use o2m_core::backends::Backends;
use o2m_core::corpus::{write_contexts, write_preferences, DialogueContext, PreferencePair, ResponseSet, Utterance};
use o2m_core::metrics::MetricReport;
use o2m_core::mrg::{Demonstration, MrgError, Strategy};
use o2m_core::odrp::OdrpError;
use o2m_core::pipeline::{run_two_stage, PipelineError, RunOptions, RunRecord, Selector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub const SCHEMAS: [(&str, &str); 6] = [
    ("error", include_str!("../schemas/error.json")),
    ("session", include_str!("../schemas/session.json")),
    ("session_state", include_str!("../schemas/session_state.json")),
    ("message", include_str!("../schemas/message.json")),
    ("select", include_str!("../schemas/select.json")),
    ("annotation", include_str!("../schemas/annotation.json")),
];

pub struct ServiceConfig {
    pub strategy: Strategy,
    pub demos: Vec<Demonstration>,
    pub selector: Selector,
    pub opts: RunOptions,
    /// Bearer token required on every route except `/healthz`.
    pub token: Option<String>,
}

struct Turn {
    record: RunRecord,
    override_index: Option<usize>,
}

impl Turn {
    fn selected_index(&self) -> usize {
        self.override_index.unwrap_or(self.record.selected_index)
    }
}

struct Session {
    id: String,
    created_at: String,
    context: DialogueContext,
    turns: Vec<Turn>,
}

struct SetEntry {
    session_id: String,
    context: DialogueContext,
    set: ResponseSet,
}

#[derive(Default)]
struct SetIndex {
    order: Vec<String>,
    entries: HashMap<String, SetEntry>,
}

/// A stored pairwise judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub context_id: String,
    pub set_id: String,
    pub chosen_index: usize,
    pub rejected_index: usize,
    pub annotator: String,
    pub created_at: String,
    pub chosen: String,
    pub rejected: String,
}

impl AnnotationRecord {
    fn key(&self) -> (String, usize, usize, String) {
        let (lo, hi) = if self.chosen_index < self.rejected_index {
            (self.chosen_index, self.rejected_index)
        } else {
            (self.rejected_index, self.chosen_index)
        };
        (self.set_id.clone(), lo, hi, self.annotator.clone())
    }

    pub fn to_pair(&self) -> PreferencePair {
        PreferencePair {
            context_id: self.context_id.clone(),
            set_id: self.set_id.clone(),
            chosen: self.chosen.clone(),
            rejected: self.rejected.clone(),
        }
    }
}

/// Append-only annotation store; one judgment per set, slot pair and
/// annotator.
pub struct AnnotationLog {
    records: Vec<AnnotationRecord>,
    keys: HashMap<(String, usize, usize, String), usize>,
    file: Option<File>,
}

impl AnnotationLog {
    pub fn in_memory() -> Self {
        Self { records: Vec::new(), keys: HashMap::new(), file: None }
    }

    /// Loads the records already in `path` and appends new ones to it.
    pub fn open(path: &std::path::Path) -> io::Result<Self> {
        let mut log = Self::in_memory();
        if path.exists() {
            for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AnnotationRecord = serde_json::from_str(line)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
                log.keys.entry(rec.key()).or_insert(log.records.len());
                log.records.push(rec);
            }
        }
        log.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(log)
    }

    /// Stores `rec` unless the same judgment exists; returns the stored
    /// record and whether it is new.
    fn insert(&mut self, rec: AnnotationRecord) -> io::Result<(AnnotationRecord, bool)> {
        if let Some(&i) = self.keys.get(&rec.key()) {
            return Ok((self.records[i].clone(), false));
        }
        if let Some(f) = self.file.as_mut() {
            let line = serde_json::to_string(&rec).expect("annotation serialises");
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.keys.insert(rec.key(), self.records.len());
        self.records.push(rec.clone());
        Ok((rec, true))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pairs(&self) -> Vec<PreferencePair> {
        self.records.iter().map(AnnotationRecord::to_pair).collect()
    }
}

struct Inner {
    backends: Backends,
    cfg: ServiceConfig,
    instance: u32,
    next_session: AtomicU64,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    sets: Mutex<SetIndex>,
    annotations: Mutex<AnnotationLog>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(backends: Backends, cfg: ServiceConfig, annotations: AnnotationLog) -> Self {
        Self(Arc::new(Inner {
            backends,
            cfg,
            instance: rand::random(),
            next_session: AtomicU64::new(1),
            sessions: Mutex::new(HashMap::new()),
            sets: Mutex::new(SetIndex::default()),
            annotations: Mutex::new(annotations),
        }))
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.0
            .sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = if e.is_backend_unavailable() {
            StatusCode::SERVICE_UNAVAILABLE
        } else {
            match &e {
                PipelineError::Mrg(MrgError::AllSlotsMissing | MrgError::UnparseableCompletion)
                | PipelineError::Mrg(MrgError::Backend(_))
                | PipelineError::Odrp(OdrpError::AllSlotsMissing)
                | PipelineError::Backend(_) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            }
        };
        ApiError::new(status, e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(message))
        .route("/sessions/{id}/select", post(select))
        .route("/annotations", post(annotate))
        .route("/annotations/export", get(export_annotations))
        .route("/contexts/export", get(export_contexts))
        .route("/schemas/{name}", get(schema))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new().route("/healthz", get(healthz)).merge(api).with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.0.cfg.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn healthz() -> &'static str {
    "ok"
}

async fn schema(Path(name): Path<String>) -> Result<Response, ApiError> {
    let name = name.strip_suffix(".json").unwrap_or(&name);
    let (_, text) = SCHEMAS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no schema named {name:?}")))?;
    Ok(([(header::CONTENT_TYPE, "application/schema+json")], *text).into_response())
}

#[derive(Serialize)]
struct SessionCreated {
    id: String,
    created_at: String,
}

async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<SessionCreated>) {
    let n = state.0.next_session.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{:08x}-{n}", state.0.instance);
    let created_at = now();
    let session = Session {
        id: id.clone(),
        created_at: created_at.clone(),
        context: DialogueContext::empty(id.clone()),
        turns: Vec::new(),
    };
    state.0.sessions.lock().expect("session table").insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    (StatusCode::CREATED, Json(SessionCreated { id, created_at }))
}

#[derive(Serialize)]
struct TurnSummary {
    set_id: String,
    selected_index: usize,
    overridden: bool,
}

#[derive(Serialize)]
struct SessionState {
    id: String,
    created_at: String,
    context: Vec<Utterance>,
    turns: Vec<TurnSummary>,
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(SessionState {
        id: s.id.clone(),
        created_at: s.created_at.clone(),
        context: s.context.utterances().to_vec(),
        turns: s
            .turns
            .iter()
            .map(|t| TurnSummary {
                set_id: t.record.sample_id.clone(),
                selected_index: t.selected_index(),
                overridden: t.override_index.is_some(),
            })
            .collect(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageRequest {
    text: String,
}

#[derive(Serialize)]
struct Candidate {
    index: usize,
    text: Option<String>,
    score: Option<f64>,
}

#[derive(Serialize)]
struct MessageResponse {
    session_id: String,
    turn: usize,
    set_id: String,
    candidates: Vec<Candidate>,
    selected_index: usize,
    selected_text: String,
    selector: String,
    metrics: MetricReport,
}

async fn message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<MessageResponse>, ApiError> {
    let req: MessageRequest = parse_body(&body)?;
    let text = req.text.trim();
    if text.is_empty() {
        return Err(ApiError::bad_request("text must not be blank"));
    }
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    let turn = s.turns.len();
    let set_id = format!("{}-t{turn}", s.id);
    let mut context = s.context.clone();
    context.push(text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut turn_context = context.clone();
    turn_context.id = set_id.clone();

    let worker = state.clone();
    let snapshot = turn_context.clone();
    let record = tokio::task::spawn_blocking(move || {
        let i = &worker.0;
        run_two_stage(&snapshot, &i.cfg.strategy, &i.cfg.demos, &i.cfg.selector, &i.backends, &i.cfg.opts)
    })
    .await
    .map_err(|e| ApiError::internal(format!("turn processing panicked: {e}")))??;

    context.push(record.selected_text.clone()).map_err(|e| ApiError::internal(e.to_string()))?;
    s.context = context;
    {
        let mut sets = state.0.sets.lock().expect("set index");
        sets.order.push(set_id.clone());
        sets.entries.insert(
            set_id.clone(),
            SetEntry { session_id: s.id.clone(), context: turn_context, set: record.response_set.clone() },
        );
    }
    let response = MessageResponse {
        session_id: s.id.clone(),
        turn,
        set_id,
        candidates: record
            .response_set
            .slots()
            .iter()
            .zip(&record.scores_per_slot)
            .enumerate()
            .map(|(index, (text, score))| Candidate { index, text: text.clone(), score: *score })
            .collect(),
        selected_index: record.selected_index,
        selected_text: record.selected_text.clone(),
        selector: record.selector_name.to_string(),
        metrics: record.metric_report.clone(),
    };
    s.turns.push(Turn { record, override_index: None });
    Ok(Json(response))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectRequest {
    index: usize,
    /// Must name the latest turn when given.
    #[serde(default)]
    turn: Option<usize>,
}

#[derive(Serialize)]
struct SelectResponse {
    session_id: String,
    turn: usize,
    set_id: String,
    selected_index: usize,
    selected_text: String,
}

async fn select(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SelectResponse>, ApiError> {
    let req: SelectRequest = parse_body(&body)?;
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    let Some(latest) = s.turns.len().checked_sub(1) else {
        return Err(ApiError::conflict("session has no reply to override"));
    };
    if req.turn.is_some_and(|t| t != latest) {
        return Err(ApiError::conflict(format!("only the latest turn ({latest}) can be overridden")));
    }
    let set = &s.turns[latest].record.response_set;
    if req.index >= set.n() {
        return Err(ApiError::bad_request(format!("index {} is out of range for {} slots", req.index, set.n())));
    }
    let text = set
        .get(req.index)
        .ok_or_else(|| ApiError::conflict(format!("slot {} is missing", req.index)))?
        .to_string();
    s.context.replace_last(text.clone()).map_err(|e| ApiError::internal(e.to_string()))?;
    s.turns[latest].override_index = Some(req.index);
    Ok(Json(SelectResponse {
        session_id: s.id.clone(),
        turn: latest,
        set_id: s.turns[latest].record.sample_id.clone(),
        selected_index: req.index,
        selected_text: text,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRequest {
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default)]
    context_id: Option<String>,
    set_id: String,
    chosen_index: usize,
    rejected_index: usize,
    annotator: String,
    /// Ignored; the server stamps its own time.
    #[serde(default)]
    #[allow(dead_code)]
    created_at: Option<String>,
}

#[derive(Serialize)]
struct AnnotationResponse {
    stored: bool,
    duplicate: bool,
    record: AnnotationRecord,
}

async fn annotate(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: AnnotationRequest = parse_body(&body)?;
    let annotator = req.annotator.trim();
    if annotator.is_empty() {
        return Err(ApiError::bad_request("annotator must not be blank"));
    }
    if req.chosen_index == req.rejected_index {
        return Err(ApiError::bad_request("chosen_index and rejected_index must differ"));
    }
    let record = {
        let sets = state.0.sets.lock().expect("set index");
        let entry = sets
            .entries
            .get(&req.set_id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown set {:?}", req.set_id)))?;
        if req.session_id.as_ref().is_some_and(|s| *s != entry.session_id) {
            return Err(ApiError::bad_request(format!("set {} does not belong to that session", req.set_id)));
        }
        if req.context_id.as_ref().is_some_and(|c| *c != entry.context.id) {
            return Err(ApiError::bad_request(format!("set {} does not belong to that context", req.set_id)));
        }
        let n = entry.set.n();
        let text = |i: usize| -> Result<String, ApiError> {
            if i >= n {
                return Err(ApiError::bad_request(format!("index {i} is out of range for {n} slots")));
            }
            entry.set.get(i).map(String::from).ok_or_else(|| ApiError::conflict(format!("slot {i} is missing")))
        };
        AnnotationRecord {
            session_id: Some(entry.session_id.clone()),
            context_id: entry.context.id.clone(),
            set_id: req.set_id.clone(),
            chosen_index: req.chosen_index,
            rejected_index: req.rejected_index,
            annotator: annotator.to_string(),
            created_at: now(),
            chosen: text(req.chosen_index)?,
            rejected: text(req.rejected_index)?,
        }
    };
    let (record, stored) = state
        .0
        .annotations
        .lock()
        .expect("annotation log")
        .insert(record)
        .map_err(|e| ApiError::internal(format!("annotation log: {e}")))?;
    let status = if stored { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(AnnotationResponse { stored, duplicate: !stored, record })).into_response())
}

fn jsonl(body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn export_annotations(State(state): State<AppState>) -> Result<Response, ApiError> {
    let pairs = state.0.annotations.lock().expect("annotation log").pairs();
    let mut out = Vec::new();
    write_preferences(&mut out, &pairs).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(jsonl(out))
}

async fn export_contexts(State(state): State<AppState>) -> Result<Response, ApiError> {
    let contexts: Vec<DialogueContext> = {
        let sets = state.0.sets.lock().expect("set index");
        let mut seen = HashSet::new();
        sets.order
            .iter()
            .map(|id| &sets.entries[id].context)
            .filter(|c| seen.insert(c.id.clone()))
            .cloned()
            .collect()
    };
    let mut out = Vec::new();
    write_contexts(&mut out, &contexts).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(jsonl(out))
}
