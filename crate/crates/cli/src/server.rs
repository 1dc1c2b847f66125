use std::sync::Arc;

use agriqrs::pipeline::FittedPipeline;
use agriqrs::retrieval::top_k_answers;
use anyhow::Context;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    text: String,
    k: usize,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health(State(p): State<Arc<FittedPipeline>>) -> Response {
    Json(json!({ "status": "ok", "clusters": p.cluster_count() })).into_response()
}

async fn query(State(p): State<Arc<FittedPipeline>>, body: Bytes) -> Response {
    let body: QueryBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    if body.k == 0 {
        return error(StatusCode::BAD_REQUEST, "k must be >= 1");
    }
    let result = tokio::task::spawn_blocking(move || top_k_answers(&body.text, body.k, &p)).await;
    match result {
        Ok(Ok(ranked)) => match serde_json::to_string(&ranked) {
            Ok(s) => ([(header::CONTENT_TYPE, "application/json")], s).into_response(),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        },
        Ok(Err(e)) if e.is_data_error() => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(pipeline: Arc<FittedPipeline>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .with_state(pipeline)
}

pub async fn serve(pipeline: FittedPipeline, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(pipeline)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
