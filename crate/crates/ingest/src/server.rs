//! HTTP front end over an [`EventStore`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{ConnectInfo, FromRequestParts, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use noteflow_core::event::{event_from_value, serialize_event, RawEvent, SchemaError};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::store::{AcceptOutcome, EventStore, ExportFilter, Receipt, StoreError};

pub type SharedStore = Arc<dyn EventStore>;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("request body is not JSON: {0}")]
    Syntax(String),
    #[error("record {index}: {source}")]
    Schema { index: usize, source: SchemaError },
    #[error("missing query parameter `{0}`")]
    MissingParam(&'static str),
    #[error("invalid query parameter `{name}`: {value}")]
    InvalidParam { name: &'static str, value: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("storage task failed: {0}")]
    Join(String),
}

impl IngestError {
    fn status(&self) -> StatusCode {
        match self {
            IngestError::Store(_) | IngestError::Join(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

impl IntoResponse for IngestError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "store failure");
        }
        let mut body = json!({ "error": self.to_string() });
        if let IngestError::Schema { index, source } = &self {
            body["index"] = json!(index);
            body["field"] = json!(source.field());
        }
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AcceptResponse {
    pub accepted: usize,
    pub duplicates: usize,
}

/// Hex sha256 of the peer IP, so raw addresses are never stored.
pub struct SourceHash(pub String);

pub fn hash_source(addr: &str) -> String {
    hex::encode(Sha256::digest(addr.as_bytes()))
}

impl<S: Send + Sync> FromRequestParts<S> for SourceHash {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, Self::Rejection> {
        let addr = parts
            .extensions
            .get::<ConnectInfo<SocketAddr>>()
            .map_or_else(|| "unknown".to_string(), |c| c.0.ip().to_string());
        Ok(SourceHash(hash_source(&addr)))
    }
}

fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

/// Decode a body holding one object, an array of objects, or JSONL lines.
/// The whole batch is rejected if any record is invalid.
pub fn parse_batch(body: &str) -> Result<Vec<RawEvent>, IngestError> {
    let trimmed = body.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    let values: Vec<Value> = match serde_json::from_str::<Value>(trimmed) {
        Ok(Value::Array(items)) => items,
        Ok(v) => vec![v],
        Err(_) => trimmed
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<Value>)
            .collect::<Result<_, _>>()
            .map_err(|e| IngestError::Syntax(e.to_string()))?,
    };
    values
        .into_iter()
        .enumerate()
        .map(|(index, v)| event_from_value(v).map_err(|source| IngestError::Schema { index, source }))
        .collect()
}

async fn store_batch(store: SharedStore, events: Vec<RawEvent>, source: String) -> Result<AcceptResponse, IngestError> {
    let received_at = now_ms();
    let batch = events.into_iter().map(|e| (e, Receipt { received_at, source_hash: source.clone() })).collect();
    let outcomes = tokio::task::spawn_blocking(move || store.append(batch))
        .await
        .map_err(|e| IngestError::Join(e.to_string()))??;
    let duplicates = outcomes.iter().filter(|o| **o == AcceptOutcome::Duplicate).count();
    Ok(AcceptResponse { accepted: outcomes.len() - duplicates, duplicates })
}

async fn post_events(
    State(store): State<SharedStore>,
    SourceHash(source): SourceHash,
    body: String,
) -> Result<Json<AcceptResponse>, IngestError> {
    let events = parse_batch(&body)?;
    Ok(Json(store_batch(store, events, source).await?))
}

async fn get_event(
    State(store): State<SharedStore>,
    SourceHash(source): SourceHash,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<AcceptResponse>, IngestError> {
    let record = params.get("e").ok_or(IngestError::MissingParam("e"))?;
    let value: Value = serde_json::from_str(record).map_err(|e| IngestError::Syntax(e.to_string()))?;
    let event = event_from_value(value).map_err(|source| IngestError::Schema { index: 0, source })?;
    Ok(Json(store_batch(store, vec![event], source).await?))
}

fn parse_filter(params: &HashMap<String, String>) -> Result<ExportFilter, IngestError> {
    let time = |name: &'static str| -> Result<Option<i64>, IngestError> {
        params
            .get(name)
            .map(|v| v.parse().map_err(|_| IngestError::InvalidParam { name, value: v.clone() }))
            .transpose()
    };
    Ok(ExportFilter {
        session: params.get("session").cloned(),
        user: params.get("user").cloned(),
        notebook: params.get("notebook").cloned(),
        from: time("from")?,
        to: time("to")?,
    })
}

/// Render events as JSONL, one canonical record per line.
pub fn to_jsonl(events: &[RawEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serialize_event(e));
        out.push('\n');
    }
    out
}

async fn export(
    State(store): State<SharedStore>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, IngestError> {
    let filter = parse_filter(&params)?;
    let events = tokio::task::spawn_blocking(move || store.export(&filter))
        .await
        .map_err(|e| IngestError::Join(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], to_jsonl(&events)).into_response())
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/events", get(get_event).post(post_events))
        .route("/export", get(export))
        .with_state(store)
}

/// Serve until ctrl-c. In-flight appends finish before the listener closes.
pub async fn serve(listener: tokio::net::TcpListener, store: SharedStore) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "ingest listening");
    axum::serve(listener, router(store).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_forms() {
        let line = r#"{"kind":"notebook_launch","session_id":"s","kernel_id":"k","notebook_name":"n","timestamp":1,"seq":1,"user_id":"u"}"#;
        assert_eq!(parse_batch(line).unwrap().len(), 1);
        assert_eq!(parse_batch(&format!("[{line},{line}]")).unwrap().len(), 2);
        assert_eq!(parse_batch(&format!("{line}\n{line}\n")).unwrap().len(), 2);
        assert!(parse_batch("").unwrap().is_empty());
        let bad = line.replace("\"timestamp\":1", "\"timestamp\":-1");
        match parse_batch(&format!("{line}\n{bad}")) {
            Err(IngestError::Schema { index: 1, source }) => assert_eq!(source.field(), Some("timestamp")),
            other => panic!("{other:?}"),
        }
    }
}
