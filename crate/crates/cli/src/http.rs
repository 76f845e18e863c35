//! HTTP/JSON front end over [`crate::service`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use stylerec::catalog::Slot;

use crate::service::{
    handle_generate, handle_health, handle_pair_score, handle_products, handle_rank, handle_slots, ApiError,
    ServiceState,
};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const ADDR_ENV: &str = "STYLEREC_ADDR";

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json_response(status, self.body())
    }
}

fn ok<T: Serialize>(value: &T) -> Response {
    json_response(StatusCode::OK, serde_json::to_vec(value).expect("response serializes"))
}

/// Decodes a JSON body; any failure is a 400.
fn decode<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

type Shared = State<Arc<ServiceState>>;

async fn health(State(s): Shared) -> Response {
    ok(&handle_health(&s))
}

async fn slots() -> Response {
    ok(&serde_json::json!({ "slots": handle_slots() }))
}

async fn products(State(s): Shared, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let slot = q
        .get("slot")
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<Slot>().map_err(|e| ApiError::bad_request(e.to_string())))
        .transpose()?;
    let window = q
        .get("window")
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| ApiError::bad_request(format!("invalid window {v:?}")))
        })
        .transpose()?;
    Ok(ok(&handle_products(slot, window, &s)?))
}

async fn score_pair(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    Ok(ok(&handle_pair_score(&decode(&body)?, &s)?))
}

async fn rank(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    Ok(ok(&handle_rank(&decode(&body)?, &s)?))
}

async fn generate(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    Ok(ok(&handle_generate(&decode(&body)?, &s)?))
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/slots", get(slots))
        .route("/products", get(products))
        .route("/score/pair", post(score_pair))
        .route("/rank", post(rank))
        .route("/outfits/generate", post(generate))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: ServiceState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
