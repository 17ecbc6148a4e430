//! HTTP JSON API over a loaded [`Engine`].

use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{detokenize, tokenize};
use crate::error::Error;
use crate::inference::{DecodeOptions, Engine, GenerationResult};

/// Messages longer than this many tokens are refused.
pub const MAX_MESSAGE_TOKENS: usize = 1000;
const MAX_ENTITY_MATCHES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyRequest {
    pub message: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyEntity {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub predicate: String,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyResponse {
    pub response_text: String,
    pub entities: Vec<ReplyEntity>,
    pub gate_trace: Vec<f64>,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl ReplyResponse {
    pub fn new(result: &GenerationResult, session_id: Option<String>) -> Self {
        Self {
            response_text: detokenize(&result.tokens),
            entities: result
                .entity_emissions
                .iter()
                .map(|e| ReplyEntity {
                    surface: e.surface.clone(),
                    entity_type: e.entity_type.to_string(),
                    predicate: e.predicate.to_string(),
                    position: e.position,
                })
                .collect(),
            gate_trace: result.gate_trace.clone(),
            score: result.score,
            session_id,
        }
    }
}

/// Runs one request through the engine. Shared by the HTTP handler, the
/// REPL and the C interface.
pub fn reply(engine: &Engine, request: ReplyRequest, opts: &DecodeOptions) -> Result<ReplyResponse, Error> {
    let tokens = tokenize(&request.message);
    if tokens.len() > MAX_MESSAGE_TOKENS {
        return Err(Error::Input(format!(
            "message has {} tokens, the limit is {MAX_MESSAGE_TOKENS}",
            tokens.len()
        )));
    }
    let result = engine.generate_tokens(&tokens, opts)?;
    Ok(ReplyResponse::new(&result, request.session_id))
}

struct Loaded {
    engine: Arc<Engine>,
    version: String,
}

/// Shared handler state. The engine slot is filled once, possibly after
/// the server has started listening.
#[derive(Clone)]
pub struct AppState {
    loaded: Arc<OnceLock<Loaded>>,
    opts: DecodeOptions,
}

impl AppState {
    pub fn loading(opts: DecodeOptions) -> Self {
        Self {
            loaded: Arc::new(OnceLock::new()),
            opts,
        }
    }

    pub fn ready(engine: Engine, version: impl Into<String>, opts: DecodeOptions) -> Self {
        let state = Self::loading(opts);
        state.install(engine, version);
        state
    }

    /// Installs the engine; later calls are ignored.
    pub fn install(&self, engine: Engine, version: impl Into<String>) {
        let _ = self.loaded.set(Loaded {
            engine: Arc::new(engine),
            version: version.into(),
        });
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_loaded() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "model is still loading")
}

async fn health(State(state): State<AppState>) -> Response {
    match state.loaded.get() {
        Some(l) => Json(json!({ "status": "ok", "model_version": l.version })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading", "model_version": null })),
        )
            .into_response(),
    }
}

async fn post_reply(State(state): State<AppState>, body: Bytes) -> Response {
    let request: ReplyRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")),
    };
    let Some(loaded) = state.loaded.get() else {
        return not_loaded();
    };
    if tokenize(&request.message).len() > MAX_MESSAGE_TOKENS {
        return error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("message exceeds {MAX_MESSAGE_TOKENS} tokens"),
        );
    }
    let engine = Arc::clone(&loaded.engine);
    let opts = state.opts;
    let outcome = tokio::task::spawn_blocking(move || reply(&engine, request, &opts)).await;
    match outcome {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ (Error::Input(_) | Error::Validation(_)))) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("generation task failed: {e}")),
    }
}

#[derive(Debug, Deserialize)]
struct EntityQuery {
    #[serde(default)]
    q: String,
}

async fn kb_entities(State(state): State<AppState>, Query(query): Query<EntityQuery>) -> Response {
    let Some(loaded) = state.loaded.get() else {
        return not_loaded();
    };
    let matches: Vec<_> = loaded
        .engine
        .kb
        .entities_with_prefix(&query.q)
        .into_iter()
        .take(MAX_ENTITY_MATCHES)
        .map(|e| {
            json!({
                "id": e.id,
                "surface": e.surface_forms.first().map(|s| detokenize(s)).unwrap_or_default(),
                "type": e.entity_type,
            })
        })
        .collect();
    Json(matches).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/reply", post(post_reply))
        .route("/kb/entities", get(kb_entities))
        .with_state(state)
}
