//! HTTP query service.
//!
//! `POST /query` answers one question, `GET /health` reports readiness. Until
//! the index and checkpoint are loaded both endpoints answer 503.

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mixqa::encoder::{load_checkpoint, ModelError};
use mixqa::multitask::MultitaskError;
use mixqa::pipeline::{PipelineError, RankedAnswer, Reader, ReaderOptions};
use mixqa::retriever::load_index;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ServiceConfig;

pub struct AppState {
    reader: OnceLock<Arc<Reader>>,
    pub default_n_retrieve: usize,
    pub default_k: usize,
}

impl AppState {
    /// State that answers 503 until [`AppState::set_ready`] is called.
    pub fn loading(default_n_retrieve: usize, default_k: usize) -> Arc<Self> {
        Arc::new(Self {
            reader: OnceLock::new(),
            default_n_retrieve,
            default_k,
        })
    }

    pub fn ready(reader: Reader, default_n_retrieve: usize, default_k: usize) -> Arc<Self> {
        let state = Self::loading(default_n_retrieve, default_k);
        state.set_ready(reader);
        state
    }

    pub fn set_ready(&self, reader: Reader) {
        let _ = self.reader.set(Arc::new(reader));
    }

    pub fn reader(&self) -> Option<&Arc<Reader>> {
        self.reader.get()
    }
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    pub n_retrieve: Option<usize>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerView {
    pub rank: usize,
    pub answer_text: String,
    pub paragraph_score: f64,
    pub span_score: f64,
    pub bm25_score: f64,
    pub doc_id: String,
    pub chunk_id: String,
    /// Code-point offsets into `context`.
    pub highlight: Highlight,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answers: Vec<AnswerView>,
}

pub fn answer_view(reader: &Reader, a: &RankedAnswer) -> AnswerView {
    let context = reader.index().chunk(a.chunk_ref).text.clone();
    let (char_start, char_end) = a.char_range(&context);
    AnswerView {
        rank: a.rank,
        answer_text: a.answer_text.clone(),
        paragraph_score: a.paragraph_score,
        span_score: a.span_score,
        bm25_score: a.bm25_score,
        doc_id: a.doc_id.clone(),
        chunk_id: a.chunk_id.clone(),
        highlight: Highlight {
            char_start,
            char_end,
        },
        context,
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/health", get(health))
        .fallback(not_found)
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "not found")
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.reader() {
        Some(r) => Json(json!({ "status": "ok", "chunks": r.index().n_chunks() })).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading" })),
        )
            .into_response(),
    }
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(reader) = state.reader().cloned() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "service is starting");
    };
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if req.question.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "question must not be empty");
    }
    let n_retrieve = req.n_retrieve.unwrap_or(state.default_n_retrieve);
    let k = req.k.unwrap_or(state.default_k);
    if k == 0 || k > n_retrieve {
        return error(
            StatusCode::BAD_REQUEST,
            format!("need 1 <= k <= n_retrieve, got k={k} n_retrieve={n_retrieve}"),
        );
    }

    let result = tokio::task::spawn_blocking(move || {
        reader
            .answer(&req.question, n_retrieve, k)
            .map(|answers| QueryResponse {
                answers: answers.iter().map(|a| answer_view(&reader, a)).collect(),
            })
    })
    .await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ PipelineError::InvalidK { .. }))
        | Ok(Err(e @ PipelineError::Model(MultitaskError::Model(ModelError::QuestionTooLong { .. })))) => {
            error(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn load_reader(config: &ServiceConfig) -> anyhow::Result<Reader> {
    let index = load_index(&config.index_path)?;
    let (params, vocab) = load_checkpoint(&config.checkpoint_path)?;
    let options = ReaderOptions {
        max_answer_len: config.max_answer_len,
        ..Default::default()
    };
    Ok(Reader::new(params, vocab, index, options)?)
}

/// Bind, load artifacts in the background, serve until Ctrl-C or SIGTERM.
/// In-flight requests complete before shutdown returns.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{}:{}", config.host, config.port).parse()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);

    let state = AppState::loading(config.n_retrieve, config.k);
    let loader_state = state.clone();
    let loader = tokio::task::spawn_blocking(move || -> anyhow::Result<()> {
        let reader = load_reader(&config)?;
        eprintln!("loaded {} chunks", reader.index().n_chunks());
        loader_state.set_ready(reader);
        Ok(())
    });

    let (fail_tx, fail_rx) = tokio::sync::oneshot::channel::<anyhow::Error>();
    tokio::spawn(async move {
        let err = match loader.await {
            Ok(Ok(())) => return,
            Ok(Err(e)) => e,
            Err(e) => e.into(),
        };
        let _ = fail_tx.send(err);
    });

    let load_failure = Arc::new(std::sync::Mutex::new(None));
    let failure_slot = load_failure.clone();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = shutdown_signal() => {}
                Ok(e) = fail_rx => { *failure_slot.lock().unwrap() = Some(e); }
            }
        })
        .await?;
    let failure = load_failure.lock().unwrap().take();
    match failure {
        Some(e) => Err(e.context("loading index/checkpoint")),
        None => Ok(()),
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
