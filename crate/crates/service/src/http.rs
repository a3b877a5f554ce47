//! HTTP and WebSocket interface.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use scopevoice_core::call::{parse_response, FunctionCall};
use scopevoice_core::dictation::{ListeningProfile, ProfileName};
use scopevoice_core::prompt::render_json;
use scopevoice_core::router::RouterError;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;
use tracing::warn;
use uuid::Uuid;

use crate::catalog::CatalogError;
use crate::config::BackendKind;
use crate::engine::{EventFrame, EventKind, Mode, SessionError, SessionRecord};
use crate::sessions::{ManagerError, SessionManager};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockSource {
    /// Time runs with the server's clock from session creation.
    #[default]
    Wall,
    /// Time only moves with `at_ms` values sent by the client.
    Client,
}

#[derive(Clone)]
pub struct AppState {
    manager: Arc<SessionManager>,
    wall: Arc<Mutex<HashMap<Uuid, Instant>>>,
}

impl AppState {
    pub fn new(manager: Arc<SessionManager>) -> Self {
        Self {
            manager,
            wall: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn manager(&self) -> &Arc<SessionManager> {
        &self.manager
    }

    fn wall_ms(&self, id: Uuid) -> Option<u64> {
        let wall = self.wall.lock().unwrap_or_else(|e| e.into_inner());
        wall.get(&id).map(|t| t.elapsed().as_millis() as u64)
    }

    /// Advances every wall-clock session to the current time. Run
    /// periodically by the server so dictation deadlines fire unprompted.
    pub fn tick_wall_sessions(&self) {
        let ids: Vec<Uuid> = self
            .wall
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .copied()
            .collect();
        for id in ids {
            let (Ok(session), Some(now)) = (self.manager.get(id), self.wall_ms(id)) else {
                continue;
            };
            // a session busy with a backend call is ticked next round
            let Ok(mut s) = session.try_lock() else { continue };
            if now > s.clock_ms() && !s.is_closed() {
                if let Err(e) = s.advance_to(now) {
                    warn!(session = %id, error = %e, "tick failed");
                }
            }
        }
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ManagerError> for ApiError {
    fn from(e: ManagerError) -> Self {
        let status = match &e {
            ManagerError::UnknownSession(_) | ManagerError::Catalog(CatalogError::UnknownCase(_)) => {
                StatusCode::NOT_FOUND
            }
            ManagerError::BackendMissing(_) => StatusCode::BAD_REQUEST,
            ManagerError::Catalog(CatalogError::Io(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            ManagerError::Catalog(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ManagerError::Session(s) => return s.into(),
        };
        ApiError(status, e.to_string())
    }
}

impl From<&SessionError> for ApiError {
    fn from(e: &SessionError) -> Self {
        let status = match e {
            SessionError::OutOfOrder { .. } => StatusCode::CONFLICT,
            SessionError::WrongMode(_) | SessionError::NoBackend => StatusCode::BAD_REQUEST,
            SessionError::Router(RouterError::BackendUnavailable(_)) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::Router(RouterError::SessionClosed(_)) => StatusCode::GONE,
            SessionError::Router(RouterError::Prompt(_)) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        (&e).into()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        ManagerError::Catalog(e).into()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/cases", get(list_cases).post(upload_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/prompt", get(get_prompt))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/tick", post(tick))
        .route("/sessions/{id}/correction", post(correction))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn list_cases(State(app): State<AppState>) -> Json<Value> {
    Json(json!({ "cases": app.manager.catalog().list() }))
}

async fn get_case(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let catalog = app.manager.catalog().clone();
    blocking(move || Ok(Json(json!(catalog.get(&id)?.summary())))).await
}

async fn get_prompt(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let catalog = app.manager.catalog().clone();
    blocking(move || {
        let loaded = catalog.get(&id)?;
        let store = loaded.examples.lock().unwrap_or_else(|e| e.into_inner());
        let doc = scopevoice_core::prompt::build_initial_prompt(&loaded.case, &loaded.matrix, &loaded.registry, &store)
            .map_err(CatalogError::Prompt)?;
        Ok(([("content-type", "application/json")], render_json(&doc)).into_response())
    })
    .await
}

/// Multipart bundle: a `case` part holding case.json, and one part per mesh
/// whose file name (or field name) is the mesh's `mesh_ref`.
async fn upload_case(State(app): State<AppState>, mut form: Multipart) -> Result<(StatusCode, Json<Value>), ApiError> {
    let mut case_json = None;
    let mut files = Vec::new();
    while let Some(field) = form.next_field().await.map_err(|e| bad_request(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| bad_request(e.to_string()))?.to_vec();
        if name == "case" {
            case_json = Some(bytes);
        } else {
            files.push((file_name.unwrap_or(name), bytes));
        }
    }
    let case_json = case_json.ok_or_else(|| bad_request("missing `case` part"))?;
    let catalog = app.manager.catalog().clone();
    let loaded = blocking(move || Ok(catalog.install(&case_json, &files)?)).await?;
    Ok((StatusCode::CREATED, Json(json!(loaded.summary()))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    case_id: String,
    mode: Mode,
    #[serde(default)]
    profile: Option<ProfileName>,
    #[serde(default)]
    backend: Option<BackendKind>,
    #[serde(default)]
    clock: ClockSource,
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let manager = app.manager.clone();
    let view = blocking(move || {
        let s = manager.create(
            &req.case_id,
            req.mode,
            req.profile.map(ListeningProfile::named),
            req.backend,
        )?;
        let view = s.lock().unwrap_or_else(|e| e.into_inner()).view();
        Ok((view, req.clock))
    })
    .await?;
    if view.1 == ClockSource::Wall {
        app.wall
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(view.0.session_id, Instant::now());
    }
    Ok((StatusCode::CREATED, Json(json!(view.0))))
}

fn parse_id(raw: &str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw).map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("unknown session {raw}")))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let id = parse_id(&id)?;
    app.manager.remove(id)?;
    app.wall.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

async fn session_state(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = app.manager.get(parse_id(&id)?)?;
    let view = s.lock().unwrap_or_else(|e| e.into_inner()).view();
    Ok(Json(json!(view)))
}

/// Runs `f` on the session with the request's time resolved: `at_ms` when
/// given, otherwise the wall clock (wall sessions only).
async fn with_session<F>(app: AppState, raw_id: String, at_ms: Option<u64>, f: F) -> Result<Json<Value>, ApiError>
where
    F: FnOnce(&mut SessionRecord, u64) -> Result<Vec<EventFrame>, SessionError> + Send + 'static,
{
    let id = parse_id(&raw_id)?;
    let session = app.manager.get(id)?;
    let wall = app.wall_ms(id);
    blocking(move || {
        let mut s = session.lock().unwrap_or_else(|e| e.into_inner());
        let at = match (at_ms, wall) {
            (Some(at), _) => at,
            (None, Some(now)) => now.max(s.clock_ms()),
            (None, None) => return Err(bad_request("at_ms is required for client-clock sessions")),
        };
        let events = f(&mut s, at)?;
        Ok(Json(json!({ "events": events, "state": s.view() })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRequest {
    text: String,
    #[serde(default)]
    at_ms: Option<u64>,
}

async fn utterance(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<UtteranceRequest>,
) -> Result<Json<Value>, ApiError> {
    with_session(app, id, req.at_ms, move |s, at| s.handle_utterance(&req.text, at)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TickRequest {
    #[serde(default)]
    at_ms: Option<u64>,
}

async fn tick(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TickRequest>,
) -> Result<Json<Value>, ApiError> {
    with_session(app, id, req.at_ms, |s, at| s.advance_to(at)).await
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ResultText {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectionBody {
    sentence: String,
    result: ResultText,
    #[serde(default)]
    at_ms: Option<u64>,
}

async fn correction(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<CorrectionBody>,
) -> Result<Json<Value>, ApiError> {
    let text = match req.result {
        ResultText::One(s) => s,
        ResultText::Many(v) => v.join("; "),
    };
    let calls: Vec<FunctionCall> =
        parse_response(&text).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("result: {e}")))?;
    with_session(app, id, req.at_ms, move |s, at| s.correct(&req.sentence, calls, at)).await
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let session = app.manager.get(parse_id(&id)?)?;
    // backlog and subscription taken under one lock so no frame falls between them
    let (backlog, rx) = {
        let s = session.lock().unwrap_or_else(|e| e.into_inner());
        (s.events_since(q.since), s.subscribe())
    };
    Ok(ws.on_upgrade(move |socket| stream_events(socket, backlog, rx)))
}

async fn send_frame(socket: &mut WebSocket, frame: &EventFrame) -> bool {
    let text = serde_json::to_string(frame).unwrap_or_default();
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn stream_events(
    mut socket: WebSocket,
    backlog: Vec<EventFrame>,
    mut rx: tokio::sync::broadcast::Receiver<EventFrame>,
) {
    let mut last = 0;
    for frame in &backlog {
        if !send_frame(&mut socket, frame).await {
            return;
        }
        last = frame.seq;
        if frame.kind == EventKind::Closed {
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            frame = rx.recv() => match frame {
                Ok(frame) if frame.seq <= last => {}
                Ok(frame) => {
                    if !send_frame(&mut socket, &frame).await {
                        return;
                    }
                    last = frame.seq;
                    if frame.kind == EventKind::Closed {
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    let note = json!({ "error": format!("{n} events dropped; reconnect with since={last}") });
                    let _ = socket.send(Message::Text(note.to_string().into())).await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
        }
    }
}

/// Binds `addr` and serves until interrupted. Wall-clock sessions are
/// ticked every 100 ms.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let ticker = state.clone();
    tokio::spawn(async move {
        let mut every = tokio::time::interval(Duration::from_millis(crate::engine::CT_TICK_MS));
        loop {
            every.tick().await;
            let app = ticker.clone();
            let _ = tokio::task::spawn_blocking(move || app.tick_wall_sessions()).await;
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
