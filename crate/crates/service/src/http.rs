//! JSON API over live sessions.
//!
//! | method | path                    | body                               |
//! |--------|-------------------------|------------------------------------|
//! | POST   | `/sessions`             | `{profile, kb, strategy?, top_k?}` |
//! | POST   | `/sessions/{id}/turns`  | `{utterance}`                      |
//! | GET    | `/sessions/{id}`        |                                    |
//! | POST   | `/sessions/{id}/config` | `{strategy?, top_k?}`              |
//! | GET    | `/graph`                |                                    |
//! | GET    | `/health`               |                                    |

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elicit_core::planner::Strategy;
use elicit_core::Requirement;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{parse_kb, parse_profile};
use crate::session::{DialogueSession, Engine, RequirementPlan, SessionConfig, TurnError};
use crate::store::SessionStore;

type Shared = Arc<Mutex<DialogueSession>>;

pub struct AppState {
    pub engine: Arc<Engine>,
    sessions: RwLock<HashMap<String, Shared>>,
    store: Option<SessionStore>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, store: Option<SessionStore>) -> Arc<Self> {
        Arc::new(AppState {
            engine,
            sessions: RwLock::new(HashMap::new()),
            store,
        })
    }

    /// In-memory session, falling back to the snapshot store.
    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        if let Some(s) = self.sessions.read().get(id) {
            return Ok(s.clone());
        }
        let loaded = match &self.store {
            Some(store) => store.load(id).map_err(|e| ApiError::bad_request(e.to_string()))?,
            None => None,
        };
        let s = loaded.ok_or_else(|| ApiError::not_found(id))?;
        let mut map = self.sessions.write();
        Ok(map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(s)))
            .clone())
    }

    fn persist(&self, s: &DialogueSession) -> Result<(), ApiError> {
        if let Some(store) = &self.store {
            store.save(s).map_err(|e| ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                stage: Some("persistence".into()),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    stage: Option<String>,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            stage: None,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            stage: None,
            message: format!("no session `{id}`"),
        }
    }
}

impl From<TurnError> for ApiError {
    fn from(e: TurnError) -> Self {
        match &e {
            TurnError::InvalidInput(_) => ApiError::bad_request(e.to_string()),
            TurnError::Pipeline { stage, .. } => ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                stage: Some(stage.to_string()),
                message: e.to_string(),
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "stage": self.stage });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub user_id: Option<String>,
    pub profile: serde_json::Value,
    #[serde(default)]
    pub kb: Vec<Vec<String>>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub plan: RequirementPlan,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRequest {
    pub utterance: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRequest {
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphView {
    pub nodes: Vec<Requirement>,
    pub counts: Vec<Vec<u64>>,
    pub node_count: usize,
    pub edge_count: usize,
    pub total_count: u64,
}

/// Runs blocking model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        stage: None,
        message: e.to_string(),
    })?
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<Created>, ApiError> {
    let Json(req) = body?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let user = req.user_id.clone().unwrap_or_else(|| id.clone());
    let profile = parse_profile(&user, &req.profile).map_err(|e| ApiError::bad_request(format!("{e:#}")))?;
    let kb = parse_kb(&user, &req.kb).map_err(|e| ApiError::bad_request(format!("{e:#}")))?;
    let defaults = SessionConfig::default();
    let config = SessionConfig {
        strategy: req.strategy.unwrap_or(defaults.strategy),
        top_k: req.top_k.unwrap_or(defaults.top_k),
    };
    let app2 = app.clone();
    let session = blocking(move || Ok(app2.engine.create_session(id, profile, kb, config)?)).await?;
    app.persist(&session)?;
    let out = Created {
        session_id: session.session_id.clone(),
        plan: session.plan.clone(),
    };
    app.sessions
        .write()
        .insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
    Ok(Json(out))
}

async fn post_turn(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<TurnRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let shared = app.session(&id)?;
    blocking(move || {
        let mut s = shared.lock();
        let outcome = app.engine.process_turn(&mut s, &req.utterance)?;
        app.persist(&s)?;
        Ok(Json(outcome).into_response())
    })
    .await
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let shared = app.session(&id)?;
    let snapshot = shared.lock().clone();
    Ok(Json(snapshot).into_response())
}

async fn post_config(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ConfigRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let shared = app.session(&id)?;
    blocking(move || {
        let mut s = shared.lock();
        let config = SessionConfig {
            strategy: req.strategy.unwrap_or(s.config.strategy),
            top_k: req.top_k.unwrap_or(s.config.top_k),
        };
        app.engine.reconfigure(&mut s, config)?;
        app.persist(&s)?;
        Ok(Json(json!({ "config": s.config, "plan": s.plan })).into_response())
    })
    .await
}

async fn get_graph(State(app): State<Arc<AppState>>) -> Json<GraphView> {
    let g = &app.engine.graph;
    Json(GraphView {
        nodes: g.nodes().to_vec(),
        counts: g.counts().to_vec(),
        node_count: g.len(),
        edge_count: g.edge_count(),
        total_count: g.total_count(),
    })
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "sessions": app.sessions.read().len() }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/config", post(post_config))
        .route("/graph", get(get_graph))
        .route("/health", get(health))
        .with_state(state)
}
