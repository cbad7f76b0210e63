//! JSON-over-HTTP front end for the gate.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use oodgate::gate::{GateState, Prediction};
use oodgate::Matrix;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::config::ServeSection;
use crate::error::CliError;
use crate::log;

pub const MAX_BATCH: usize = 1024;
pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
struct AppState {
    gate: Arc<GateState>,
    admin_token: Option<Arc<str>>,
    serial: Option<Arc<Mutex<()>>>,
}

pub fn router(gate: Arc<GateState>, cfg: &ServeSection) -> Router {
    let state = AppState {
        gate,
        admin_token: cfg.admin_token.as_deref().map(Arc::from),
        serial: cfg.single_worker.then(|| Arc::new(Mutex::new(()))),
    };
    Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .route("/v1/admin/config", post(admin_config))
        // a full batch of wide rows is well past axum's 2 MB default
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>, row: Option<usize>) -> Response {
    (status, Json(json!({ "error": msg.into(), "row": row }))).into_response()
}

/// Parses `{"inputs": [[..], ..]}` into a matrix, naming the offending row.
fn parse_inputs(body: &[u8], dim: usize) -> Result<Matrix, Response> {
    let v: Value = serde_json::from_slice(body)
        .map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}"), None))?;
    let rows = v
        .get("inputs")
        .and_then(Value::as_array)
        .ok_or_else(|| error(StatusCode::BAD_REQUEST, "expected {\"inputs\": [[...], ...]}", None))?;
    if rows.len() > MAX_BATCH {
        return Err(error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("batch of {} exceeds {MAX_BATCH}", rows.len()),
            None,
        ));
    }
    let mut data = Vec::with_capacity(rows.len() * dim);
    for (i, row) in rows.iter().enumerate() {
        let bad = |msg: String| error(StatusCode::BAD_REQUEST, msg, Some(i));
        let row = row.as_array().ok_or_else(|| bad("row is not an array".into()))?;
        if row.len() != dim {
            return Err(bad(format!("row has {} values, expected {dim}", row.len())));
        }
        for x in row {
            data.push(x.as_f64().ok_or_else(|| bad("non-numeric value".into()))?);
        }
    }
    Matrix::new(rows.len(), dim, data).map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string(), None))
}

fn prediction_json(p: &Prediction) -> Value {
    match p {
        Prediction::Logits(l) => json!({ "logits": l }),
        Prediction::Label(k) => json!({ "label": k }),
    }
}

async fn predict(State(st): State<AppState>, body: Bytes) -> Response {
    let batch = match parse_inputs(&body, st.gate.input_dim()) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let _guard = match &st.serial {
        Some(m) => Some(m.clone().lock_owned().await),
        None => None,
    };
    match st.gate.respond_batch(&batch) {
        Ok(out) => {
            let outputs: Vec<Value> = out.iter().map(|r| prediction_json(&r.prediction)).collect();
            Json(json!({ "outputs": outputs })).into_response()
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

async fn health(State(st): State<AppState>) -> Response {
    Json(json!({ "status": "ok", "mode": st.gate.config().label_mode })).into_response()
}

fn authorized(st: &AppState, headers: &HeaderMap) -> bool {
    match (&st.admin_token, headers.get(ADMIN_HEADER)) {
        (Some(want), Some(got)) => got.as_bytes() == want.as_bytes(),
        _ => false,
    }
}

async fn stats(State(st): State<AppState>, headers: HeaderMap) -> Response {
    if !authorized(&st, &headers) {
        return error(StatusCode::UNAUTHORIZED, "bad or missing admin token", None);
    }
    Json(st.gate.stats()).into_response()
}

async fn admin_config(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if !authorized(&st, &headers) {
        return error(StatusCode::UNAUTHORIZED, "bad or missing admin token", None);
    }
    let p = serde_json::from_slice::<Value>(&body)
        .ok()
        .and_then(|v| v.get("p").and_then(Value::as_f64));
    let Some(p) = p else {
        return error(StatusCode::BAD_REQUEST, "expected {\"p\": number}", None);
    };
    let _guard = match &st.serial {
        Some(m) => Some(m.clone().lock_owned().await),
        None => None,
    };
    match st.gate.set_p(p) {
        Ok(cfg) => {
            log::info("set_p", &[("p", &cfg.p)]);
            Json(json!({
                "p": cfg.p,
                "label_mode": cfg.label_mode,
                "consistent_responses": cfg.consistent_responses,
            }))
            .into_response()
        }
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string(), None),
    }
}

/// Serves until ctrl-c.
pub async fn run(gate: Arc<GateState>, cfg: &ServeSection) -> Result<(), CliError> {
    let addr: SocketAddr = cfg
        .bind
        .parse()
        .map_err(|_| CliError::ConfigInvalid(vec![format!("serve.bind: {:?} is not a socket address", cfg.bind)]))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Server(format!("bind {addr}: {e}")))?;
    let local = listener.local_addr()?;
    log::info(
        "serve",
        &[
            ("addr", &local),
            ("mode", &gate.config().label_mode),
            ("single_worker", &cfg.single_worker),
        ],
    );
    if cfg.admin_token.is_none() {
        log::warn("serve", &[("msg", &"no admin token set; admin endpoints disabled")]);
    }
    axum::serve(listener, router(gate, cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}
