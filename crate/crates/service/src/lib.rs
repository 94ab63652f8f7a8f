//! HTTP/JSON elicitation service. Each session runs a PBO loop whose
//! decision maker is the person answering queries in a browser.
//!
//! Endpoints:
//! `POST /sessions`, `GET /sessions/{id}/query`,
//! `POST /sessions/{id}/preference`, `GET /sessions/{id}/result` and
//! `GET /healthz`. Errors use the body `{"code": ..., "message": ...}`.
//!
//! Planning and model refits run on blocking worker threads; while they run
//! the session reports `computing`. Every answer is appended to the
//! session's journal before it is applied, so a restarted service replays
//! the journal and resumes with the same proposals.

mod error;
mod journal;
pub mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use prefdrive_core::cache::PlanCache;
use prefdrive_core::pbo::Choice;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

pub use error::{ApiError, ErrorBody};
pub use journal::{Journal, JournalEntry};
use session::{PlanPayload, QueryPayload, SessionConfig, SessionEngine};

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Directory of session journals; sessions are not persisted when unset.
    pub journal_dir: Option<PathBuf>,
    /// Plan cache directory.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingAnswer,
    Computing,
    Finished,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsweredQuery {
    pub iteration: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub choice: Choice,
}

struct Session {
    status: Status,
    budget: usize,
    /// Taken out while a worker computes.
    engine: Option<SessionEngine>,
    pending: Option<QueryPayload>,
    history: Vec<AnsweredQuery>,
    incumbent: Option<PlanPayload>,
    error: Option<String>,
    journal: Option<Journal>,
}

type SessionRef = Arc<Mutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, SessionRef>>>,
    journal_dir: Option<PathBuf>,
    cache: PlanCache,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreatedResponse {
    pub id: String,
    pub budget: usize,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub id: String,
    pub status: Status,
    /// Answered queries.
    pub iteration: usize,
    pub budget: usize,
    pub query: Option<QueryPayload>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRequest {
    pub choice: Choice,
    /// Number of the answered query; rejected when stale.
    #[serde(default)]
    pub iteration: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceResponse {
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub budget: usize,
    pub incumbent: Option<PlanPayload>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultResponse {
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub budget: usize,
    /// Posterior-mean maximizer; absent while computing.
    pub incumbent: Option<PlanPayload>,
    pub history: Vec<AnsweredQuery>,
}

impl AppState {
    /// Opens the service state, replaying every journal in `journal_dir`.
    /// Blocking: replays refit models and plan pending queries.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ApiError> {
        let cache = cfg.cache_dir.map(PlanCache::new).unwrap_or_default();
        let mut sessions = HashMap::new();
        if let Some(dir) = &cfg.journal_dir {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::internal(e.to_string()))?;
            for (id, journal, entries) in Journal::scan(dir).map_err(|e| ApiError::internal(e.to_string()))? {
                match replay(&entries, &cache) {
                    Ok(mut s) => {
                        s.journal = Some(journal);
                        log::info!("resumed session {id} at iteration {}", s.history.len());
                        sessions.insert(id, Arc::new(Mutex::new(s)));
                    }
                    Err(e) => log::error!("cannot replay session {id}: {}", e.message),
                }
            }
        }
        Ok(Self {
            sessions: Arc::new(RwLock::new(sessions)),
            journal_dir: cfg.journal_dir,
            cache,
        })
    }

    async fn get(&self, id: &str) -> Result<SessionRef, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
    }
}

/// Rebuilds a session from its journal, applying answers in order.
fn replay(entries: &[JournalEntry], cache: &PlanCache) -> Result<Session, ApiError> {
    let Some(JournalEntry::Create { resolved, .. }) = entries.first() else {
        return Err(ApiError::internal("journal does not start with a create record"));
    };
    let mut engine = SessionEngine::new(resolved.clone(), cache.clone())?;
    let mut history = Vec::new();
    for e in &entries[1..] {
        match e {
            JournalEntry::Answer(q) => {
                engine.answer(&q.a, &q.b, q.choice)?;
                history.push(q.clone());
            }
            JournalEntry::Create { .. } => return Err(ApiError::internal("second create record")),
        }
    }
    let budget = engine.budget();
    let mut s = Session {
        status: Status::AwaitingAnswer,
        budget,
        engine: None,
        pending: None,
        history,
        incumbent: None,
        error: None,
        journal: None,
    };
    if engine.iteration() >= budget {
        s.incumbent = Some(engine.incumbent()?);
        s.status = Status::Finished;
    } else {
        s.pending = Some(engine.propose()?);
    }
    s.engine = Some(engine);
    Ok(s)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/preference", post(post_preference))
        .route("/sessions/{id}/result", get(get_result))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let state = tokio::task::spawn_blocking(move || AppState::open(cfg))
        .await
        .map_err(std::io::Error::other)?
        .map_err(|e| std::io::Error::other(e.message))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let cfg: SessionConfig = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => return Err(ApiError::invalid_config(format!("invalid session config: {e}"))),
    };
    let cache = app.cache.clone();
    let engine = blocking(move || {
        let resolved = cfg.resolve(&cache)?;
        Ok(SessionEngine::new(resolved, cache)?)
    })
    .await?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let journal = match &app.journal_dir {
        Some(dir) => {
            let j = Journal::create(dir, &id).map_err(|e| ApiError::internal(e.to_string()))?;
            j.append(&JournalEntry::Create {
                id: id.clone(),
                resolved: engine.resolved.clone(),
            })
            .map_err(|e| ApiError::internal(e.to_string()))?;
            Some(j)
        }
        None => None,
    };
    let budget = engine.budget();
    let session = Arc::new(Mutex::new(Session {
        status: Status::Computing,
        budget,
        engine: None,
        pending: None,
        history: Vec::new(),
        incumbent: None,
        error: None,
        journal,
    }));
    app.sessions.write().await.insert(id.clone(), session.clone());
    spawn_next_query(session, engine, None);
    Ok((
        StatusCode::CREATED,
        Json(CreatedResponse {
            id,
            budget,
            status: Status::Computing,
        }),
    ))
}

/// Applies `answer` (if any) and computes the next query off the request
/// path; the session stays `computing` until done.
fn spawn_next_query(session: SessionRef, mut engine: SessionEngine, answer: Option<AnsweredQuery>) {
    tokio::spawn(async move {
        let result = tokio::task::spawn_blocking(move || {
            let r = (|| {
                if let Some(q) = &answer {
                    engine.answer(&q.a, &q.b, q.choice)?;
                }
                engine.propose()
            })();
            (engine, r)
        })
        .await;
        let mut s = session.lock().await;
        match result {
            Ok((engine, Ok(query))) => {
                s.engine = Some(engine);
                s.pending = Some(query);
                s.status = Status::AwaitingAnswer;
            }
            Ok((engine, Err(e))) => {
                s.engine = Some(engine);
                s.error = Some(e.to_string());
                s.status = Status::Failed;
            }
            Err(e) => {
                s.error = Some(format!("worker failed: {e}"));
                s.status = Status::Failed;
            }
        }
    });
}

async fn get_query(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<QueryResponse>, ApiError> {
    let session = app.get(&id).await?;
    let s = session.lock().await;
    Ok(Json(QueryResponse {
        id,
        status: s.status,
        iteration: s.history.len(),
        budget: s.budget,
        query: if s.status == Status::AwaitingAnswer { s.pending.clone() } else { None },
        message: s.error.clone(),
    }))
}

async fn post_preference(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<PreferenceResponse>, ApiError> {
    let session = app.get(&id).await?;
    let value: serde_json::Value = parse_body(&body)?;
    let req: PreferenceRequest = serde_json::from_value(value)
        .map_err(|e| ApiError::invalid_choice(format!("expected {{\"choice\": \"a\" | \"b\"}}: {e}")))?;
    let mut s = session.lock().await;
    if s.status != Status::AwaitingAnswer {
        return Err(ApiError::conflict(format!("no pending query (status {:?})", s.status)));
    }
    let pending = s.pending.clone().expect("awaiting sessions have a pending query");
    if let Some(n) = req.iteration {
        if n != pending.iteration {
            return Err(ApiError::conflict(format!(
                "answer for query {n}, pending query is {}",
                pending.iteration
            )));
        }
    }
    let answer = AnsweredQuery {
        iteration: pending.iteration,
        a: pending.a.xi.clone(),
        b: pending.b.xi.clone(),
        choice: req.choice,
    };
    if let Some(j) = &s.journal {
        j.append(&JournalEntry::Answer(answer.clone()))
            .map_err(|e| ApiError::internal(format!("cannot persist answer: {e}")))?;
    }
    let mut engine = s.engine.take().expect("awaiting sessions own their engine");
    s.pending = None;
    s.history.push(answer.clone());
    s.status = Status::Computing;
    let iteration = s.history.len();
    let budget = s.budget;
    if iteration < budget {
        spawn_next_query(session.clone(), engine, Some(answer));
        return Ok(Json(PreferenceResponse {
            id,
            status: Status::Computing,
            iteration,
            budget,
            incumbent: None,
        }));
    }
    // last answer: the incumbent is part of the response
    let result = tokio::task::spawn_blocking(move || {
        let r = engine.answer(&answer.a, &answer.b, answer.choice).and_then(|_| engine.incumbent());
        (engine, r)
    })
    .await
    .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?;
    let (engine, r) = result;
    s.engine = Some(engine);
    match r {
        Ok(inc) => {
            s.incumbent = Some(inc.clone());
            s.status = Status::Finished;
            Ok(Json(PreferenceResponse {
                id,
                status: Status::Finished,
                iteration,
                budget,
                incumbent: Some(inc),
            }))
        }
        Err(e) => {
            s.status = Status::Failed;
            s.error = Some(e.to_string());
            Err(e.into())
        }
    }
}

async fn get_result(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<ResultResponse>, ApiError> {
    let session = app.get(&id).await?;
    let mut s = session.lock().await;
    let incumbent = match (&s.incumbent, s.status) {
        (Some(inc), _) => Some(inc.clone()),
        (None, Status::AwaitingAnswer) => {
            let engine = s.engine.take().expect("awaiting sessions own their engine");
            let (engine, r) = tokio::task::spawn_blocking(move || {
                let r = engine.incumbent();
                (engine, r)
            })
            .await
            .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?;
            s.engine = Some(engine);
            Some(r?)
        }
        _ => None,
    };
    Ok(Json(ResultResponse {
        id,
        status: s.status,
        iteration: s.history.len(),
        budget: s.budget,
        incumbent,
        history: s.history.clone(),
    }))
}
