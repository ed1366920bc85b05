//! HTTP/JSON routes.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use prefchat_core::data::{keyed_rng, write_records, Action, AnnotatedTurn, DialogueRecord, MIN_ANNOTATED_ROUNDS};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::queue::{InferenceQueue, QueueError};
use crate::session::{Command, Mode, Session, SessionError, SessionState, MAX_CHAT_ROUNDS};
use crate::store::{Event, ExportFilter, Store, Verdict};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), detail: Value::Null }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id} not found"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "state_conflict", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match &e {
            SessionError::Validation(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", m.clone()),
            SessionError::Conflict(m) => Self::conflict(m.clone()),
            SessionError::TooFewRounds { rounds, remaining } => Self::new(StatusCode::CONFLICT, "too_few_rounds", e.to_string())
                .with_detail(json!({ "round_count": rounds, "rounds_remaining": remaining })),
        }
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::Full => Self::new(StatusCode::SERVICE_UNAVAILABLE, "busy", e.to_string()),
            QueueError::Stopped => Self::internal(e),
            QueueError::Generation(g) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", g.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub mode: Mode,
    pub state: SessionState,
    pub round_count: usize,
    pub min_rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    pub can_finish: bool,
    pub turns: Vec<AnnotatedTurn>,
    pub pending_candidates: Vec<String>,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        Self {
            id: s.id.clone(),
            mode: s.mode,
            state: s.state,
            round_count: s.round_count,
            min_rounds: MIN_ANNOTATED_ROUNDS,
            max_rounds: (s.mode == Mode::Chat).then_some(MAX_CHAT_ROUNDS),
            can_finish: s.can_finish(),
            turns: s.turns.clone(),
            pending_candidates: s.pending_candidates.clone(),
        }
    }
}

struct Slot {
    session: tokio::sync::Mutex<Session>,
    /// Last committed view, readable while a mutation is in flight.
    view: RwLock<SessionView>,
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    store: Mutex<Store>,
    queue: InferenceQueue,
    seed: u64,
}

impl AppState {
    pub fn new(store: Store, sessions: Vec<Session>, queue: InferenceQueue, seed: u64) -> Arc<Self> {
        let map = sessions
            .into_iter()
            .map(|s| {
                let view = RwLock::new(SessionView::from(&s));
                (s.id.clone(), Arc::new(Slot { session: tokio::sync::Mutex::new(s), view }))
            })
            .collect();
        Arc::new(Self { sessions: RwLock::new(map), store: Mutex::new(store), queue, seed })
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/opening", post(submit_opening))
        .route("/sessions/{id}/response", post(submit_response))
        .route("/sessions/{id}/message", post(send_message))
        .route("/sessions/{id}/finish", post(finish_session))
        .route("/records/{id}/review", post(review))
        .route("/export", get(export))
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    mode: Mode,
}

async fn create_session(State(app): State<Arc<AppState>>, Json(body): Json<CreateBody>) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let id = loop {
        let id = format!("{}-{:016x}", if body.mode == Mode::Collect { "collect" } else { "chat" }, rand::random::<u64>());
        if !app.sessions.read().contains_key(&id) && app.store.lock().get(&id).is_none() {
            break id;
        }
    };
    let session = Session::new(id.clone(), body.mode);
    app.store.lock().log(&id, &Event::Created { mode: body.mode, at: now() }).map_err(ApiError::internal)?;
    let view = SessionView::from(&session);
    let slot = Arc::new(Slot { session: tokio::sync::Mutex::new(session), view: RwLock::new(view.clone()) });
    app.sessions.write().insert(id, slot);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    Ok(Json(app.slot(&id)?.view.read().clone()))
}

/// Runs one command under the session's lock. A second request arriving
/// while the first holds the lock gets a state conflict rather than waiting.
async fn run(app: &AppState, id: &str, command: Command, expected_round: Option<usize>) -> ApiResult<(SessionView, crate::session::Outcome)> {
    let slot = app.slot(id)?;
    let mut session = slot.session.try_lock().map_err(|_| ApiError::conflict("another request for this session is in progress"))?;
    if let Some(r) = expected_round {
        if r != session.round_count {
            return Err(ApiError::conflict(format!("expected round {r} but session is at round {}", session.round_count))
                .with_detail(json!({ "round_count": session.round_count })));
        }
    }
    let prepared = session.prepare(command.clone())?;
    let candidates = match &prepared.context {
        Some(ctx) => {
            let seed = keyed_rng(app.seed, id, session.turns.len()).next_u64();
            app.queue.generate(ctx.clone(), seed).await?
        }
        None => Vec::new(),
    };
    // Persist first so a failed write leaves the session unchanged.
    let mut next = session.clone();
    let outcome = next.commit(prepared, candidates.clone());
    {
        let mut store = app.store.lock();
        store.log(id, &Event::Applied { command, candidates, at: now() }).map_err(ApiError::internal)?;
        if let Some(rec) = &outcome.record {
            let mut rec = rec.clone();
            rec.created_at = Some(now());
            store.put(rec).map_err(ApiError::internal)?;
        }
    }
    *session = next;
    let view = SessionView::from(&*session);
    *slot.view.write() = view.clone();
    Ok((view, outcome))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextBody {
    text: String,
    expected_round: Option<usize>,
}

async fn submit_opening(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<TextBody>) -> ApiResult<Json<SessionView>> {
    let (view, _) = run(&app, &id, Command::Opening { text: b.text }, b.expected_round).await?;
    Ok(Json(view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseBody {
    action: Action,
    chosen_index: Option<usize>,
    text: String,
    expected_round: Option<usize>,
}

async fn submit_response(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<ResponseBody>) -> ApiResult<Json<SessionView>> {
    let cmd = Command::Response { action: b.action, chosen_index: b.chosen_index, text: b.text };
    let (view, _) = run(&app, &id, cmd, b.expected_round).await?;
    Ok(Json(view))
}

async fn send_message(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<TextBody>) -> ApiResult<Json<Value>> {
    let (view, outcome) = run(&app, &id, Command::Message { text: b.text }, b.expected_round).await?;
    let reply = outcome.reply.expect("chat message yields a reply");
    Ok(Json(json!({ "reply": reply.text, "preference_score": reply.preference_score, "session": view })))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FinishBody {
    expected_round: Option<usize>,
}

async fn finish_session(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Option<Json<FinishBody>>) -> ApiResult<Json<Value>> {
    let b = body.map(|Json(b)| b).unwrap_or_default();
    let (view, outcome) = run(&app, &id, Command::Finish, b.expected_round).await?;
    let record = app.store.lock().get(&id).cloned().or(outcome.record);
    Ok(Json(json!({ "record": record, "session": view })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewBody {
    verdict: Verdict,
    reviewer_id: String,
}

async fn review(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<ReviewBody>) -> ApiResult<Json<DialogueRecord>> {
    if b.reviewer_id.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", "reviewer_id must not be empty"));
    }
    let slot = app.sessions.read().get(&id).cloned();
    // Hold the session lock, if the session is live, so review and session
    // mutation never interleave.
    let mut guard = match &slot {
        Some(s) => Some(s.session.try_lock().map_err(|_| ApiError::conflict("session is busy"))?),
        None => None,
    };
    let mut store = app.store.lock();
    let mut rec = store.get(&id).cloned().ok_or_else(|| ApiError::not_found("record", &id))?;
    rec.status = b.verdict.apply_to(rec.status).ok_or_else(|| {
        ApiError::conflict(format!("record {id} is {:?}; a {:?} vote cannot change it", rec.status, b.verdict))
    })?;
    store
        .log(&id, &Event::Reviewed { verdict: b.verdict, reviewer_id: b.reviewer_id, at: now() })
        .map_err(ApiError::internal)?;
    store.put(rec.clone()).map_err(ApiError::internal)?;
    drop(store);
    if let (Some(slot), Some(guard)) = (&slot, guard.as_mut()) {
        guard.state = match rec.status {
            prefchat_core::data::RecordStatus::Accepted => SessionState::Accepted,
            _ => SessionState::Rejected,
        };
        *slot.view.write() = SessionView::from(&**guard);
    }
    Ok(Json(rec))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    status: Option<String>,
    #[serde(flatten)]
    filter: ExportFilter,
}

async fn export(State(app): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    if let Some(s) = q.status.as_deref().filter(|s| *s != "accepted") {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", format!("only accepted records are exported, got status={s}")));
    }
    let records = app.store.lock().export(&q.filter);
    let mut body = Vec::new();
    write_records(&mut body, &records).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
