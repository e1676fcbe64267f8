//! HTTP/JSON service for live test sessions.
//!
//! | method | path                      | body            | success |
//! |--------|---------------------------|-----------------|---------|
//! | GET    | `/health`                 |                 | 200     |
//! | GET    | `/models`                 |                 | 200     |
//! | POST   | `/sessions`               | `CreateSession` | 201     |
//! | POST   | `/sessions/{id}/answers`  | `AnswerRequest` | 200     |
//! | GET    | `/sessions/{id}`          |                 | 200     |
//!
//! Errors are `{"error": "..."}` with 400 (bad mode, unknown question,
//! invalid state), 404 (unknown model or session) or 409 (question already
//! answered, session finished, concurrent write to the same session).
//!
//! With a log directory every session is persisted as `<id>.jsonl`: a
//! header line followed by one `{"question", "state"}` line per answer.
//! Sessions are rebuilt from these files at startup.

pub mod convert;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use moncat_core::cat::{Mode, Session, SessionConfig};
use moncat_core::error::SessionError;
use moncat_core::inference::JointModel;
use moncat_core::model::StudentModel;
use moncat_wire::{
    AnswerRequest, AnswerResponse, CreateSession, ErrorBody, Health, ModelInfo, SessionCreated, SessionLog,
};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::convert::{question_info, step_payload};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("model {id}: {source}")]
    Model {
        id: String,
        source: moncat_core::error::InferenceError,
    },
    #[error("duplicate model id {0}")]
    DuplicateModel(String),
    #[error("session log {path}: {reason}")]
    Log { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    session_id: String,
    model: String,
    mode: Mode,
    created: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogAnswer {
    question: usize,
    state: usize,
}

struct SessionEntry {
    id: String,
    model: String,
    created: u64,
    session: Session,
    file: Option<File>,
}

/// Loaded models and live sessions.
pub struct AppState {
    models: BTreeMap<String, Arc<JointModel>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    log_dir: Option<PathBuf>,
}

impl AppState {
    /// Builds the state and replays any session logs found in `log_dir`.
    pub fn new(models: Vec<(String, StudentModel)>, log_dir: Option<PathBuf>) -> Result<Self, ServerError> {
        let mut loaded = BTreeMap::new();
        for (id, model) in models {
            let jm = JointModel::new(model).map_err(|source| ServerError::Model { id: id.clone(), source })?;
            if loaded.insert(id.clone(), Arc::new(jm)).is_some() {
                return Err(ServerError::DuplicateModel(id));
            }
        }
        let state = AppState {
            models: loaded,
            sessions: RwLock::new(HashMap::new()),
            log_dir,
        };
        if let Some(dir) = &state.log_dir {
            fs::create_dir_all(dir).map_err(|source| io_error(dir, source))?;
            state.replay(dir)?;
        }
        Ok(state)
    }

    fn replay(&self, dir: &Path) -> Result<(), ServerError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|source| io_error(dir, source))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut sessions = self.sessions.write().unwrap();
        for path in paths {
            let entry = self.replay_file(&path)?;
            tracing::info!(session = %entry.id, steps = entry.session.log().len() - 1, "replayed session");
            sessions.insert(entry.id.clone(), Arc::new(Mutex::new(entry)));
        }
        Ok(())
    }

    fn replay_file(&self, path: &Path) -> Result<SessionEntry, ServerError> {
        let bad = |reason: String| ServerError::Log {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path).map_err(|source| io_error(path, source))?;
        let mut lines = BufReader::new(file).lines();
        let header: LogHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line.map_err(|source| io_error(path, source))?)
                .map_err(|e| bad(format!("header: {}", e)))?,
            None => return Err(bad("empty file".into())),
        };
        let jm = self
            .models
            .get(&header.model)
            .ok_or_else(|| bad(format!("unknown model {}", header.model)))?;
        let mut session =
            Session::new(jm.clone(), SessionConfig::new(jm, header.mode)).map_err(|e| bad(e.to_string()))?;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|source| io_error(path, source))?;
            if line.trim().is_empty() {
                continue;
            }
            let a: LogAnswer = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {}", i + 2, e)))?;
            session
                .submit_answer(a.question, a.state)
                .map_err(|e| bad(format!("line {}: {}", i + 2, e)))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| io_error(path, source))?;
        Ok(SessionEntry {
            id: header.session_id,
            model: header.model,
            created: header.created,
            session,
            file: Some(file),
        })
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {} not found", id)))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> ServerError {
    ServerError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn append_line<T: Serialize>(file: &mut File, value: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()
}

struct ApiError {
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

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::Finished | SessionError::AlreadyAnswered(_) => StatusCode::CONFLICT,
            SessionError::UnknownQuestion(_) | SessionError::InvalidState { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

/// The service routes. `cors_origin` restricts cross-origin requests to
/// one origin; any origin is allowed when it is `None`.
pub fn router(state: Arc<AppState>, cors_origin: Option<HeaderValue>) -> Router {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods(tower_http::cors::Any)
        .allow_headers(tower_http::cors::Any);
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(answer))
        .layer(cors)
        .with_state(state)
}

/// Serves until the listener fails or ctrl-c is received.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    cors_origin: Option<HeaderValue>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state, cors_origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into() })
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(
        state
            .models
            .iter()
            .map(|(id, jm)| ModelInfo {
                id: id.clone(),
                skills: jm.model().num_skills(),
                questions: jm.model().num_questions(),
                max_score: jm.model().max_score(),
            })
            .collect(),
    )
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    let jm = state
        .models
        .get(&req.model)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("model {} not found", req.model)))?;
    let mode: Mode = req
        .mode
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let id = uuid::Uuid::new_v4().to_string();
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let config = SessionConfig::new(&jm, mode);
    let session = tokio::task::spawn_blocking(move || Session::new(jm, config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let file = match &state.log_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.jsonl", id));
            let mut file = File::create(&path).map_err(internal)?;
            let header = LogHeader {
                session_id: id.clone(),
                model: req.model.clone(),
                mode,
                created,
            };
            append_line(&mut file, &header).map_err(internal)?;
            Some(file)
        }
        None => None,
    };
    let response = SessionCreated {
        session_id: id.clone(),
        model: req.model.clone(),
        mode: mode.to_string(),
        summary: step_payload(session.last()),
        next_question: session
            .next_question()
            .map(|q| question_info(session.joint_model().model(), q)),
        done: session.is_finished(),
    };
    let entry = SessionEntry {
        id: id.clone(),
        model: req.model,
        created,
        session,
        file,
    };
    tracing::info!(session = %id, model = %response.model, %mode, "created session");
    state.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(response)))
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn answer(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AnswerRequest>, JsonRejection>,
) -> Result<Json<AnswerResponse>, ApiError> {
    let entry = state.session(&id)?;
    let Json(req) = body?;
    let mut guard = entry
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, format!("session {} is busy", id)))?;
    tokio::task::spawn_blocking(move || {
        let entry = &mut *guard;
        entry.session.submit_answer(req.question, req.state)?;
        if let Some(file) = &mut entry.file {
            append_line(
                file,
                &LogAnswer {
                    question: req.question,
                    state: req.state,
                },
            )
            .map_err(internal)?;
        }
        let session = &entry.session;
        Ok(Json(AnswerResponse {
            summary: step_payload(session.last()),
            next_question: session
                .next_question()
                .map(|q| question_info(session.joint_model().model(), q)),
            done: session.is_finished(),
        }))
    })
    .await
    .map_err(internal)?
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionLog>, ApiError> {
    let entry = state.session(&id)?;
    let entry = entry.lock().await;
    Ok(Json(SessionLog {
        session_id: entry.id.clone(),
        model: entry.model.clone(),
        mode: entry.session.config().mode.to_string(),
        created: entry.created,
        steps: entry.session.log().iter().map(step_payload).collect(),
    }))
}
