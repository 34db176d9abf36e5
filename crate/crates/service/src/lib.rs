//! HTTP/JSON service for interactive community search.
//!
//! The service holds one temporal graph and one shared meta model. Each
//! session adapts its own copy of the model to user feedback, and
//! finalizing a session folds it back into the meta model. Endpoint bodies
//! are defined in [`cstgn_protocol`].

mod error;
mod view;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cstgn_core::graph::TemporalGraph;
use cstgn_core::interactive::{MetaModel, Session, SessionConfig};
use cstgn_core::model::Model;
use cstgn_protocol::{
    CreateSessionResponse, FeedbackRequest, FeedbackResponse, FinalizeResponse, GraphParams,
    GraphResponse, HealthResponse, HealthStatus, QueryRequest, QueryResponse,
};
use tokio::net::TcpListener;

pub use error::ApiError;
pub use view::graph_view;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    /// Feedback epochs, learning rate, meta step α, default η and seed of
    /// every session.
    pub session: SessionConfig,
    /// Most nodes any `/graph` response carries.
    pub node_budget: usize,
    /// Open sessions untouched this long are discarded (not finalized).
    pub idle_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            node_budget: 500,
            idle_timeout: Duration::from_secs(30 * 60),
        }
    }
}

struct Loaded {
    graph: Arc<TemporalGraph>,
    meta: Arc<RwLock<MetaModel>>,
}

enum Slot {
    Open {
        session: Arc<tokio::sync::Mutex<Session>>,
        last_used: Instant,
    },
    Finalized {
        at: Instant,
    },
}

struct Inner {
    config: ServiceConfig,
    loaded: OnceLock<Loaded>,
    sessions: Mutex<HashMap<String, Slot>>,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// A service that answers 503 until [`AppState::install`] is called.
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                loaded: OnceLock::new(),
                sessions: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn with_model(config: ServiceConfig, graph: TemporalGraph, model: Model) -> cstgn_core::Result<Self> {
        let state = Self::new(config);
        state.install(graph, model)?;
        Ok(state)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    /// Makes the service ready. Fails if called twice or if the model does
    /// not fit the graph.
    pub fn install(&self, graph: TemporalGraph, model: Model) -> cstgn_core::Result<()> {
        if model.config.input_dim != graph.attr_dim() {
            return Err(cstgn_core::Error::Argument(format!(
                "model expects {} input features, graph has {}",
                model.config.input_dim,
                graph.attr_dim()
            )));
        }
        let loaded = Loaded {
            graph: Arc::new(graph),
            meta: Arc::new(RwLock::new(MetaModel::new(model))),
        };
        self.inner
            .loaded
            .set(loaded)
            .map_err(|_| cstgn_core::Error::State("service is already loaded".into()))
    }

    pub fn is_ready(&self) -> bool {
        self.inner.loaded.get().is_some()
    }

    fn loaded(&self) -> Result<&Loaded, ApiError> {
        self.inner.loaded.get().ok_or_else(ApiError::not_ready)
    }

    pub fn graph(&self) -> Option<Arc<TemporalGraph>> {
        self.inner.loaded.get().map(|l| l.graph.clone())
    }

    /// Copy of the current meta model.
    pub fn meta(&self) -> Option<MetaModel> {
        let l = self.inner.loaded.get()?;
        Some(l.meta.read().expect("meta lock").clone())
    }

    /// Ids of open sessions, sorted.
    pub fn open_sessions(&self) -> Vec<String> {
        let map = self.inner.sessions.lock().expect("session map");
        let mut ids: Vec<String> = map
            .iter()
            .filter(|(_, s)| matches!(s, Slot::Open { .. }))
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    /// Drops open sessions idle for longer than `max_idle`, and tombstones
    /// of the same age. Returns the ids of the discarded open sessions.
    pub fn evict_idle(&self, max_idle: Duration) -> Vec<String> {
        let now = Instant::now();
        let mut map = self.inner.sessions.lock().expect("session map");
        let mut dropped = Vec::new();
        map.retain(|id, slot| {
            let (since, open) = match slot {
                Slot::Open { last_used, .. } => (*last_used, true),
                Slot::Finalized { at } => (*at, false),
            };
            let keep = now.duration_since(since) <= max_idle;
            if !keep && open {
                dropped.push(id.clone());
            }
            keep
        });
        dropped.sort();
        dropped
    }

    fn open_session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        let mut map = self.inner.sessions.lock().expect("session map");
        match map.get_mut(id) {
            Some(Slot::Open { session, last_used }) => {
                *last_used = Instant::now();
                Ok(session.clone())
            }
            _ => Err(ApiError::not_found(id)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/graph", get(graph))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    let sessions = state.open_sessions().len();
    match state.inner.loaded.get() {
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(HealthResponse {
                status: HealthStatus::Loading,
                nodes: None,
                snapshots: None,
                sessions,
                meta_updates: 0,
            }),
        )
            .into_response(),
        Some(l) => Json(HealthResponse {
            status: HealthStatus::Ready,
            nodes: Some(l.graph.num_nodes()),
            snapshots: Some(l.graph.num_snapshots()),
            sessions,
            meta_updates: l.meta.read().expect("meta lock").updates,
        })
        .into_response(),
    }
}

async fn create_session(State(state): State<AppState>) -> Result<Json<CreateSessionResponse>, ApiError> {
    let loaded = state.loaded()?;
    let (graph, meta) = (loaded.graph.clone(), loaded.meta.clone());
    let cfg = state.config().session.clone();
    let session = tokio::task::spawn_blocking(move || {
        let meta = meta.read().expect("meta lock");
        Session::new(&meta, &graph, cfg)
    })
    .await??;
    let id = uuid::Uuid::new_v4().to_string();
    state.inner.sessions.lock().expect("session map").insert(
        id.clone(),
        Slot::Open {
            session: Arc::new(tokio::sync::Mutex::new(session)),
            last_used: Instant::now(),
        },
    );
    tracing::info!(session = %id, "session created");
    Ok(Json(CreateSessionResponse { session_id: id }))
}

/// Membership probabilities reported for a result: members and their
/// neighbors at the latest snapshot.
fn bounded_psi(graph: &TemporalGraph, members: &[usize], psi: &[f64]) -> BTreeMap<String, f64> {
    let snap = graph.last_snapshot();
    let mut out = BTreeMap::new();
    for &u in members {
        for v in std::iter::once(u).chain(snap.neighbors(u).iter().copied()) {
            out.entry(graph.node_id(v).to_string()).or_insert(psi[v]);
        }
    }
    out
}

async fn query(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let graph = state.loaded()?.graph.clone();
    let session = state.open_session(&id)?;
    let Json(req) = body?;
    let nodes = graph.resolve_ids(&req.node_ids).map_err(ApiError::unknown_nodes)?;
    let mut session = session.lock_owned().await;
    let resp = tokio::task::spawn_blocking(move || {
        if session.is_closed() {
            return Err(ApiError::not_found(&id));
        }
        let (result, index) = session.query(&graph, &nodes, req.eta)?;
        Ok(QueryResponse {
            members: result.members.iter().map(|&u| graph.node_id(u).to_string()).collect(),
            psi: bounded_psi(&graph, &result.members, &result.psi),
            interaction_index: index,
            eta: result.eta,
        })
    })
    .await??;
    Ok(Json(resp))
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackResponse>, ApiError> {
    let graph = state.loaded()?.graph.clone();
    let session = state.open_session(&id)?;
    let Json(req) = body?;
    if req.labels.is_empty() {
        return Err(ApiError::bad_request("feedback needs at least one label"));
    }
    let ids: Vec<&String> = req.labels.keys().collect();
    let nodes = graph.resolve_ids(&ids).map_err(ApiError::unknown_nodes)?;
    let labels: Vec<(usize, f64)> = nodes
        .into_iter()
        .zip(req.labels.values())
        .map(|(u, &l)| (u, l as f64))
        .collect();
    let mut session = session.lock_owned().await;
    let loss_trace = tokio::task::spawn_blocking(move || {
        if session.is_closed() {
            return Err(ApiError::not_found(&id));
        }
        Ok(session.feedback(&labels, req.epochs)?)
    })
    .await??;
    Ok(Json(FeedbackResponse { loss_trace }))
}

async fn finalize(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<FinalizeResponse>, ApiError> {
    let meta = state.loaded()?.meta.clone();
    let session = {
        let map = state.inner.sessions.lock().expect("session map");
        match map.get(&id) {
            Some(Slot::Open { session, .. }) => session.clone(),
            Some(Slot::Finalized { .. }) => {
                return Err(ApiError::conflict(format!("session {id} is already finalized")));
            }
            None => return Err(ApiError::not_found(&id)),
        }
    };
    let mut session = session.lock_owned().await;
    let norm = tokio::task::spawn_blocking(move || {
        let mut meta = meta.write().expect("meta lock");
        session.finalize(&mut meta)
    })
    .await??;
    state
        .inner
        .sessions
        .lock()
        .expect("session map")
        .insert(id.clone(), Slot::Finalized { at: Instant::now() });
    tracing::info!(session = %id, norm, "session finalized");
    Ok(Json(FinalizeResponse { meta_update_norm: norm }))
}

async fn graph(
    State(state): State<AppState>,
    params: Result<Query<GraphParams>, QueryRejection>,
) -> Result<Json<GraphResponse>, ApiError> {
    let graph = state.loaded()?.graph.clone();
    let Query(params) = params?;
    let budget = state.config().node_budget;
    let view = tokio::task::spawn_blocking(move || graph_view(&graph, &params, budget)).await??;
    Ok(Json(view))
}

/// Serves until `shutdown` resolves, evicting idle sessions in the
/// background. Open sessions are discarded, without finalizing, on exit.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let timeout = state.config().idle_timeout;
    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let period = (timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(60));
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                for id in state.evict_idle(timeout) {
                    tracing::info!(session = %id, "idle session discarded");
                }
            }
        })
    };
    let result = axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    let open = state.open_sessions();
    if !open.is_empty() {
        tracing::warn!(count = open.len(), sessions = ?open, "discarding open sessions on shutdown");
    }
    result
}
