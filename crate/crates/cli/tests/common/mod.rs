#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use oodgate::evalkit::Testbed;
use oodgate::gate::DefenseConfig;
use oodgate_cli::RunConfig;
use tower::ServiceExt;

/// Quick-running config: few samples, short training, tiny budgets.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.mixture.samples_per_class = 200;
    c.data.transfer_per_class = 50;
    c.victim.train.epochs = 5;
    c.extractor.train.epochs = 5;
    c.attack.budget = 2_000;
    c.attack.batch_size = 64;
    c.sweep.p_values = vec![0.0, 1.0];
    c.sweep.seeds = vec![0];
    c.serve.admin_token = Some("secret".into());
    c
}

pub fn small_testbed() -> Testbed {
    Testbed::build(small_config().testbed()).unwrap()
}

pub fn gate(bed: &Testbed, defense: DefenseConfig) -> Arc<oodgate::gate::GateState> {
    Arc::new(bed.gate(defense).unwrap())
}

pub async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub fn post(uri: &str, body: impl Into<String>, token: Option<&str>) -> Request<Body> {
    let mut b = Request::post(uri).header("content-type", "application/json");
    if let Some(t) = token {
        b = b.header("x-admin-token", t);
    }
    b.body(Body::from(body.into())).unwrap()
}

pub fn get(uri: &str, token: Option<&str>) -> Request<Body> {
    let mut b = Request::get(uri);
    if let Some(t) = token {
        b = b.header("x-admin-token", t);
    }
    b.body(Body::empty()).unwrap()
}

pub fn inputs_body(rows: &[Vec<f64>]) -> String {
    serde_json::json!({ "inputs": rows }).to_string()
}
