//! HTTP routes and the per-session frame stream.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use critstates::criticality::{CriticalityMethod, CriticalityThreshold, EntropyOptions, ThresholdMode};
use critstates::Policy;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::assets::Assets;
use crate::error::{Result, ServiceError};
use crate::protocol::{DecisionRecord, DecisionRequest, Envelope, EnvelopeKind, FrameMessage, DECISION_SCHEMA_VERSION};
use crate::session::{calibrate_cutoff, Command, Event, Frame, Mode, Oracle, Session, SessionConfig, SessionReport};

pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_millis(500);
pub const DEFAULT_CALIBRATION_STEPS: usize = 2000;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Directory for per-session event logs and the decision log.
    pub log_dir: Option<PathBuf>,
    pub step_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { log_dir: None, step_timeout: DEFAULT_STEP_TIMEOUT }
    }
}

pub struct SessionHandle {
    pub session: Mutex<Session>,
    /// Auto-step with no command after this long; `None` waits for every command.
    pub timeout: Option<Duration>,
}

pub struct AppState {
    pub assets: Assets,
    pub config: ServerConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    decisions: Mutex<HashMap<(String, String), DecisionRecord>>,
}

impl AppState {
    pub fn new(assets: Assets, config: ServerConfig) -> Result<Arc<Self>> {
        if let Some(dir) = &config.log_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Arc::new(Self {
            assets,
            config,
            sessions: RwLock::new(HashMap::new()),
            decisions: Mutex::new(HashMap::new()),
        }))
    }

    pub async fn session(&self, id: &str) -> Result<Arc<SessionHandle>> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleRequest {
    #[default]
    Scripted,
    Reference {
        policy: String,
        #[serde(default = "value_based")]
        method: CriticalityMethod,
        #[serde(default = "default_percentile")]
        percentile: f64,
    },
}

fn value_based() -> CriticalityMethod {
    CriticalityMethod::ValueBased
}

fn default_percentile() -> f64 {
    90.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRequest {
    /// Checkpoint hash.
    pub policy: String,
    /// Must match the checkpoint's environment when given.
    #[serde(default)]
    pub env: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Option<CriticalityMethod>,
    /// Takes the cutoff and scoring method from this deck.
    #[serde(default)]
    pub deck: Option<String>,
    #[serde(default)]
    pub threshold: Option<CriticalityThreshold>,
    #[serde(default)]
    pub calibration_steps: Option<usize>,
    #[serde(default)]
    pub oracle: OracleRequest,
    #[serde(default)]
    pub reveal_oracle: bool,
    /// Human-paced stream: steps advance on their own after the step timeout.
    #[serde(default)]
    pub interactive: bool,
    #[serde(default)]
    pub step_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session: String,
    pub policy_hash: String,
    pub env: String,
    pub mode: Mode,
    pub n_actions: usize,
    pub action_labels: Vec<String>,
    pub cutoff: f64,
    pub frame: Frame,
}

fn status(s: &Session) -> SessionStatus {
    let env = s.env();
    SessionStatus {
        session: s.id().to_string(),
        policy_hash: s.policy_hash(),
        env: env.name().to_string(),
        mode: s.mode(),
        n_actions: env.n_actions(),
        action_labels: (0..env.n_actions()).map(|a| env.action_label(a)).collect(),
        cutoff: s.cutoff(),
        frame: s.frame(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/decks", get(list_decks))
        .route("/decks/{id}", get(get_deck))
        .route("/decks/{id}/frames/{idx}", get(get_deck_frame))
        .route("/policies", get(list_policies))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/stream", get(stream_session))
        .route("/sessions/{id}/frames/{step}", get(get_session_frame))
        .route("/sessions/{id}/end", post(end_session))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/events", get(get_events))
        .route("/decisions", post(submit_decision).get(list_decisions))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn list_decks(State(app): State<Arc<AppState>>) -> impl IntoResponse {
    Json(app.assets.deck_summaries())
}

async fn get_deck(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response> {
    Ok(Json(&app.assets.deck(&id)?.deck).into_response())
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_deck_frame(State(app): State<Arc<AppState>>, Path((id, idx)): Path<(String, usize)>) -> Result<Response> {
    let asset = app.assets.deck(&id)?;
    let entry = asset.deck.entries.get(idx).ok_or_else(|| ServiceError::NotFound(format!("deck {id} entry {idx}")))?;
    let bytes = match std::fs::read(asset.dir.join(&entry.frame)) {
        Ok(b) => b,
        Err(_) => entry.scene.png_bytes()?,
    };
    Ok(png(bytes))
}

async fn list_policies(State(app): State<Arc<AppState>>) -> impl IntoResponse {
    Json(app.assets.policy_summaries())
}

async fn start_session(State(app): State<Arc<AppState>>, Json(req): Json<StartRequest>) -> Result<Response> {
    let handle = open_session(app.clone(), req).await?;
    let s = handle.session.lock().await;
    Ok((StatusCode::CREATED, Json(status(&s))).into_response())
}

/// Resolves the request against the assets and registers a new session.
pub async fn open_session(app: Arc<AppState>, req: StartRequest) -> Result<Arc<SessionHandle>> {
    let asset = app.assets.policy(&req.policy)?;
    if let Some(env) = &req.env {
        critstates::envs::EnvConfig::default_for(env)?;
        if env != asset.env.name() {
            return Err(ServiceError::BadRequest(format!("policy {} was trained on {}, not {env}", req.policy, asset.env.name())));
        }
    }
    let policy: Arc<dyn Policy> = asset.policy.clone();
    let env_cfg = asset.env.clone();
    let calibration_steps = req.calibration_steps.unwrap_or(DEFAULT_CALIBRATION_STEPS);
    let entropy = EntropyOptions::default();

    let (method, cutoff) = match &req.deck {
        Some(deck_id) => {
            let deck = &app.assets.deck(deck_id)?.deck;
            if deck.policy_hash != req.policy {
                return Err(ServiceError::BadRequest(format!("deck {deck_id} belongs to policy {}", deck.policy_hash)));
            }
            (deck.score_method, deck.cutoff)
        }
        None => {
            let method = req.method.unwrap_or(CriticalityMethod::ValueBased);
            let threshold = req.threshold.unwrap_or_default();
            let cutoff = match threshold.mode {
                ThresholdMode::Absolute => threshold.t,
                ThresholdMode::Percentile => {
                    let (p, env) = (policy.clone(), env_cfg.build(0)?);
                    blocking(move || calibrate_cutoff(env, p.as_ref(), method, entropy, threshold, calibration_steps, 0))
                        .await?
                }
            };
            (method, cutoff)
        }
    };

    let oracle = match &req.oracle {
        OracleRequest::Scripted => Oracle::Scripted,
        OracleRequest::Reference { policy: hash, method, percentile } => {
            let reference = app.assets.policy(hash)?;
            if reference.env.name() != env_cfg.name() {
                return Err(ServiceError::BadRequest(format!("reference policy {hash} was trained on another environment")));
            }
            let r: Arc<dyn Policy> = reference.policy.clone();
            let threshold = CriticalityThreshold::percentile(*percentile)?;
            let (p, env, m) = (r.clone(), env_cfg.build(0)?, *method);
            let cutoff =
                blocking(move || calibrate_cutoff(env, p.as_ref(), m, entropy, threshold, calibration_steps, 0)).await?;
            Oracle::Reference { policy: r, method: *method, entropy, cutoff }
        }
    };

    let id = uuid::Uuid::new_v4().to_string();
    let cfg = SessionConfig { mode: req.mode, seed: req.seed, method, entropy, cutoff, oracle, reveal_oracle: req.reveal_oracle };
    let mut session = Session::start(id.clone(), policy, env_cfg.build(req.seed)?, cfg)?;
    if let Some(dir) = &app.config.log_dir {
        session.persist_to(dir.join(format!("{id}.jsonl")))?;
    }
    let timeout = req
        .interactive
        .then(|| req.step_timeout_ms.map(Duration::from_millis).unwrap_or(app.config.step_timeout));
    let handle = Arc::new(SessionHandle { session: Mutex::new(session), timeout });
    app.sessions.write().await.insert(id, handle.clone());
    Ok(handle)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::BadRequest(format!("worker failed: {e}")))?
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response> {
    let h = app.session(&id).await?;
    let s = h.session.lock().await;
    Ok(Json(status(&s)).into_response())
}

async fn step_session(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(cmd): Json<Command>) -> Result<Response> {
    let h = app.session(&id).await?;
    let mut s = h.session.lock().await;
    Ok(Json(s.step(cmd)?).into_response())
}

async fn get_session_frame(State(app): State<Arc<AppState>>, Path((id, step)): Path<(String, u64)>) -> Result<Response> {
    let h = app.session(&id).await?;
    let s = h.session.lock().await;
    let scene = s.scene(step).ok_or_else(|| ServiceError::NotFound(format!("session {id} step {step}")))?;
    Ok(png(scene.png_bytes()?))
}

async fn end_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response> {
    let h = app.session(&id).await?;
    let mut s = h.session.lock().await;
    s.end()?;
    Ok(Json(s.report()?).into_response())
}

async fn get_report(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionReport>> {
    let h = app.session(&id).await?;
    let s = h.session.lock().await;
    Ok(Json(s.report()?))
}

async fn get_events(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Vec<Event>>> {
    let h = app.session(&id).await?;
    let s = h.session.lock().await;
    Ok(Json(s.events().to_vec()))
}

async fn submit_decision(State(app): State<Arc<AppState>>, Json(req): Json<DecisionRequest>) -> Result<Response> {
    app.assets.deck(&req.deck)?;
    if req.client.is_empty() {
        return Err(ServiceError::BadRequest("client id is empty".into()));
    }
    let mut decisions = app.decisions.lock().await;
    let key = (req.client.clone(), req.deck.clone());
    if let Some(existing) = decisions.get(&key) {
        if existing.decision != req.decision {
            return Err(ServiceError::Conflict(format!(
                "client {} already decided {:?} on deck {}",
                req.client, existing.decision, req.deck
            )));
        }
        return Ok((StatusCode::OK, Json(existing.clone())).into_response());
    }
    let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
    let record = DecisionRecord {
        version: DECISION_SCHEMA_VERSION,
        client: req.client,
        deck: req.deck,
        decision: req.decision,
        reason: req.reason,
        timestamp_ms,
    };
    if let Some(dir) = &app.config.log_dir {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("decisions.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(&record)?)?;
    }
    decisions.insert(key, record.clone());
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn list_decisions(State(app): State<Arc<AppState>>) -> Json<Vec<DecisionRecord>> {
    let mut all: Vec<DecisionRecord> = app.decisions.lock().await.values().cloned().collect();
    all.sort_by(|a, b| (a.timestamp_ms, &a.client, &a.deck).cmp(&(b.timestamp_ms, &b.client, &b.deck)));
    Json(all)
}

async fn stream_session(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response> {
    let h = app.session(&id).await?;
    Ok(ws.on_upgrade(move |socket| run_stream(socket, h)))
}

async fn send(socket: &mut WebSocket, env: &Envelope) -> bool {
    match serde_json::to_string(env) {
        Ok(text) => socket.send(Message::Text(text.into())).await.is_ok(),
        Err(_) => false,
    }
}

/// One client connection. A dropped connection leaves the session where it is.
async fn run_stream(mut socket: WebSocket, h: Arc<SessionHandle>) {
    let first = {
        let s = h.session.lock().await;
        Envelope::frame(&FrameMessage { frame: s.frame(), last: None, intervention: None })
    };
    if !send(&mut socket, &first).await {
        return;
    }
    loop {
        let incoming = match h.timeout {
            Some(t) => match tokio::time::timeout(t, socket.recv()).await {
                Ok(m) => m,
                Err(_) => Some(Ok(Message::Text(Envelope::command(0, Command::None).to_text().into()))),
            },
            None => socket.recv().await,
        };
        let text = match incoming {
            None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
            Some(Ok(Message::Text(t))) => t,
            Some(Ok(_)) => continue,
        };
        let mut s = h.session.lock().await;
        let reply = match Envelope::parse_command(&text) {
            Err(e) => Envelope::error(s.step_index(), &e),
            Ok(cmd) => match s.step(cmd) {
                Ok(out) => Envelope::frame(&FrameMessage { frame: out.frame, last: Some(out.last), intervention: out.intervention }),
                Err(e) => Envelope::error(s.step_index(), &e.to_string()),
            },
        };
        let closed = !s.is_live();
        drop(s);
        if !send(&mut socket, &reply).await || (closed && reply.kind == EnvelopeKind::Error) {
            break;
        }
    }
    log::debug!("stream closed");
}

