//! HTTP front end for interactive post-editing sessions.
//!
//! Each session owns its own datastores. Requests on one session run one at a time in
//! arrival order; different sessions are independent.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use retrans_core::metrics::{self, LambdaBucketReport};
use retrans_core::session::Candidate;
use retrans_core::simulate::save_snapshots;
use retrans_core::{BaseModel, Error as CoreError, Sentence, Session, SessionConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::CorsLayer;

/// Shared server state.
pub struct AppState {
    model: Arc<dyn BaseModel>,
    defaults: SessionConfig,
    snapshot_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    next_id: AtomicU64,
    epoch: u64,
}

struct SessionEntry {
    session: Session,
    created_at: u64,
    last_activity: u64,
    /// Last hypothesis shown for each source text, scored when that source is corrected.
    shown: HashMap<String, Vec<String>>,
    hypotheses: Vec<Vec<String>>,
    corrections: Vec<Vec<String>>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl AppState {
    /// `defaults` applies to fields a create request leaves out. With `snapshot_dir`, sessions
    /// can be saved on delete and are all saved by [`AppState::persist_all`].
    pub fn new(
        model: Arc<dyn BaseModel>,
        defaults: SessionConfig,
        snapshot_dir: Option<PathBuf>,
    ) -> Self {
        AppState {
            model,
            defaults,
            snapshot_dir,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            epoch: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_nanos() as u64),
        }
    }

    fn fresh_id(&self) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        format!("{:x}-{n}", self.epoch & 0xffff_ffff)
    }

    async fn entry(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Writes every live session's datastores under the snapshot directory.
    pub async fn persist_all(&self) -> std::io::Result<usize> {
        let Some(dir) = &self.snapshot_dir else {
            return Ok(0);
        };
        let sessions = self.sessions.read().await;
        for (id, entry) in sessions.iter() {
            let entry = entry.lock().await;
            save_snapshots(&entry.session, &dir.join(id)).map_err(std::io::Error::other)?;
        }
        Ok(sessions.len())
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
            },
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session {id:?}"),
        )
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        if e.is_data_error() {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", e.to_string())
        } else {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "contract_violation",
                e.to_string(),
            )
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

/// Parses a JSON body, answering 400 rather than axum's default 415/422.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub config: SessionConfig,
    pub created_at: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectRequest {
    pub source: String,
    pub corrected: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenView {
    pub id: u32,
    pub surface: String,
    pub lambda: f64,
    pub p_nmt_top: Vec<Candidate>,
    pub p_knn_top: Vec<Candidate>,
    pub neighbor_distances: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub text: String,
    pub tokens: Vec<TokenView>,
    /// Source words outside the vocabulary, decoded as the unknown token.
    pub unknown_words: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectResponse {
    pub token_entries_added: usize,
    pub policy_entries_added: usize,
    pub unknown_words: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatastoreCounts {
    pub token: usize,
    pub policy: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunningMetrics {
    pub corrections: usize,
    /// BLEU of the shown hypotheses against their corrections; `None` before any correction.
    pub bleu: Option<f64>,
    pub ter_noshift: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsResponse {
    pub id: String,
    pub created_at: u64,
    pub last_activity: u64,
    pub datastores: DatastoreCounts,
    pub metrics: RunningMetrics,
    pub lambda_buckets: LambdaBucketReport,
}

#[derive(Debug, Deserialize)]
pub struct DeleteParams {
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeleteResponse {
    pub id: String,
    pub snapshot: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/translate", post(translate))
        .route("/sessions/{id}/correct", post(correct))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/clear", post(clear))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn surfaces(s: &Sentence) -> Vec<String> {
    s.surfaces().map(str::to_string).collect()
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let config = if body.iter().all(u8::is_ascii_whitespace) {
        state.defaults.clone()
    } else {
        // Fields left out fall back to the server defaults.
        let mut merged = serde_json::to_value(&state.defaults).expect("config serializes");
        let given: serde_json::Value = parse(&body)?;
        let serde_json::Value::Object(given) = given else {
            return Err(ApiError::bad_request(
                "session config must be a JSON object",
            ));
        };
        for (k, v) in given {
            merged[k] = v;
        }
        serde_json::from_value(merged)
            .map_err(|e| ApiError::bad_request(format!("bad config: {e}")))?
    };
    let session = Session::new(state.model.clone(), config.clone())?;
    let id = state.fresh_id();
    let created_at = now();
    let entry = SessionEntry {
        session,
        created_at,
        last_activity: created_at,
        shown: HashMap::new(),
        hypotheses: Vec::new(),
        corrections: Vec::new(),
    };
    state
        .sessions
        .write()
        .await
        .insert(id.clone(), Arc::new(Mutex::new(entry)));
    tracing::info!(session = %id, "created");
    Ok((
        StatusCode::CREATED,
        Json(SessionHandle {
            id,
            config,
            created_at,
        }),
    ))
}

async fn translate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TranslateResponse>, ApiError> {
    let req: TranslateRequest = parse(&body)?;
    let entry = state.entry(&id).await?;
    let mut entry = entry.lock().await;
    let tokenized = state.model.vocab().tokenize(&req.source);
    let t = entry.session.translate(&tokenized.sentence)?;
    entry.last_activity = now();
    let hyp = surfaces(&t.hypothesis);
    entry.shown.insert(normalize(&req.source), hyp);
    let tokens = t
        .diagnostics
        .into_iter()
        .map(|d| TokenView {
            id: d.token.id,
            surface: d.token.surface,
            lambda: d.lambda,
            p_nmt_top: d.p_nmt_top,
            p_knn_top: d.p_knn_top,
            neighbor_distances: d.neighbor_distances,
        })
        .collect();
    Ok(Json(TranslateResponse {
        text: t.hypothesis.text(),
        tokens,
        unknown_words: tokenized.unknown,
    }))
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

async fn correct(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<CorrectResponse>, ApiError> {
    let req: CorrectRequest = parse(&body)?;
    let entry = state.entry(&id).await?;
    let mut entry = entry.lock().await;
    let vocab = state.model.vocab();
    let source = vocab.tokenize(&req.source);
    let corrected = vocab.tokenize(&req.corrected);
    let key = normalize(&req.source);
    let shown = match entry.shown.get(&key) {
        Some(h) => h.clone(),
        None => surfaces(&entry.session.translate(&source.sentence)?.hypothesis),
    };
    let report = entry.session.adapt(&source.sentence, &corrected.sentence)?;
    entry.shown.remove(&key);
    entry.hypotheses.push(shown);
    entry.corrections.push(surfaces(&corrected.sentence));
    entry.last_activity = now();
    let mut unknown_words = source.unknown;
    unknown_words.extend(corrected.unknown);
    Ok(Json(CorrectResponse {
        token_entries_added: report.token_entries_added,
        policy_entries_added: report.policy_entries_added,
        unknown_words,
    }))
}

async fn stats(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<StatsResponse>, ApiError> {
    let entry = state.entry(&id).await?;
    let entry = entry.lock().await;
    let scored = !entry.corrections.is_empty();
    let bleu = if scored {
        Some(metrics::corpus_bleu(&entry.hypotheses, &entry.corrections)?)
    } else {
        None
    };
    let ter_noshift = if scored {
        Some(metrics::ter_noshift(&entry.hypotheses, &entry.corrections)?)
    } else {
        None
    };
    Ok(Json(StatsResponse {
        id,
        created_at: entry.created_at,
        last_activity: entry.last_activity,
        datastores: DatastoreCounts {
            token: entry.session.token_store().len(),
            policy: entry.session.policy_store().len(),
        },
        metrics: RunningMetrics {
            corrections: entry.corrections.len(),
            bleu,
            ter_noshift,
        },
        lambda_buckets: metrics::lambda_buckets(entry.session.adaptation_log()),
    }))
}

async fn clear(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let entry = state.entry(&id).await?;
    let mut entry = entry.lock().await;
    entry.session.clear_datastores();
    entry.shown.clear();
    entry.last_activity = now();
    Ok(StatusCode::NO_CONTENT)
}

async fn delete_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<DeleteParams>,
) -> Result<Json<DeleteResponse>, ApiError> {
    let removed = state.sessions.write().await.remove(&id);
    let entry = removed.ok_or_else(|| ApiError::not_found(&id))?;
    let entry = entry.lock().await;
    let snapshot = match (&state.snapshot_dir, params.snapshot) {
        (Some(dir), true) => {
            let path = dir.join(&id);
            save_snapshots(&entry.session, &path)?;
            Some(path.display().to_string())
        }
        (None, true) => {
            return Err(ApiError::bad_request(
                "server was started without a snapshot directory",
            ));
        }
        _ => None,
    };
    tracing::info!(session = %id, "deleted");
    Ok(Json(DeleteResponse { id, snapshot }))
}

/// Serves until Ctrl-C, then saves every session if a snapshot directory is configured.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    let saved = state.persist_all().await?;
    if saved > 0 {
        tracing::info!(sessions = saved, "saved snapshots");
    }
    Ok(())
}
