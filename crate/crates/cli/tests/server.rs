mod common;

use axum::http::StatusCode;
use common::*;
use oodgate::gate::{DefenseConfig, LabelMode};
use oodgate::nets::argmax;
use oodgate_cli::config::ServeSection;
use oodgate_cli::serve::{router, MAX_BATCH};
use serde_json::Value;

fn serve_cfg() -> ServeSection {
    ServeSection {
        admin_token: Some("secret".into()),
        single_worker: true,
        ..ServeSection::default()
    }
}

fn far_row(dim: usize, i: usize) -> Vec<f64> {
    (0..dim).map(|j| 40.0 + (i * dim + j) as f64 * 1e-3).collect()
}

#[tokio::test]
async fn health_and_modes() {
    let bed = small_testbed();
    for (mode, name) in [(LabelMode::Soft, "soft"), (LabelMode::Hard, "hard")] {
        let app = router(gate(&bed, DefenseConfig { label_mode: mode, ..Default::default() }), &serve_cfg());
        let (s, body) = call(&app, get("/v1/health", None)).await;
        assert_eq!(s, StatusCode::OK);
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["status"], "ok");
        assert_eq!(v["mode"], name);
    }
}

#[tokio::test]
async fn id_mean_hard_mode_gets_victim_label() {
    let bed = small_testbed();
    let defense = DefenseConfig { label_mode: LabelMode::Hard, p: 0.7, ..Default::default() };
    let app = router(gate(&bed, defense), &serve_cfg());
    let means = bed.config.data.means.clone();
    let (s, body) = call(&app, post("/v1/predict", inputs_body(&means), None)).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let outs = v["outputs"].as_array().unwrap();
    for (k, (m, o)) in means.iter().zip(outs).enumerate() {
        let want = argmax(bed.victim.forward(&oodgate::Matrix::from_rows(&[m]).unwrap()).unwrap().row(0));
        assert_eq!(o["label"].as_u64().unwrap() as usize, want, "class {k}");
    }
}

#[tokio::test]
async fn request_errors() {
    let bed = small_testbed();
    let app = router(gate(&bed, DefenseConfig::default()), &serve_cfg());
    let d = bed.test.dim();

    let (s, body) = call(&app, post("/v1/predict", "{not json", None)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(serde_json::from_slice::<Value>(&body).unwrap()["error"].is_string());

    let rows = vec![vec![0.0; d], vec![0.0; d - 1]];
    let (s, body) = call(&app, post("/v1/predict", inputs_body(&rows), None)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["row"], 1);

    let rows = vec![vec![0.0; d]; MAX_BATCH + 1];
    let (s, _) = call(&app, post("/v1/predict", inputs_body(&rows), None)).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);

    let rows = vec![vec![0.0; d]; MAX_BATCH];
    let (s, _) = call(&app, post("/v1/predict", inputs_body(&rows), None)).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn admin_endpoints_need_the_token() {
    let bed = small_testbed();
    let app = router(gate(&bed, DefenseConfig::default()), &serve_cfg());
    assert_eq!(call(&app, get("/v1/stats", None)).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&app, get("/v1/stats", Some("wrong"))).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(
        call(&app, post("/v1/admin/config", r#"{"p":0.1}"#, None)).await.0,
        StatusCode::UNAUTHORIZED
    );

    let (s, body) = call(&app, get("/v1/stats", Some("secret"))).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, serde_json::json!({"queries_total": 0, "ood_flagged": 0, "randomized": 0}));

    let rows: Vec<Vec<f64>> = (0..7).map(|i| far_row(bed.test.dim(), i)).collect();
    call(&app, post("/v1/predict", inputs_body(&rows), None)).await;
    let v: Value = serde_json::from_slice(&call(&app, get("/v1/stats", Some("secret"))).await.1).unwrap();
    assert_eq!(v["queries_total"], 7);

    let (s, _) = call(&app, post("/v1/admin/config", r#"{"p":1.5}"#, Some("secret"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, body) = call(&app, post("/v1/admin/config", r#"{"p":0}"#, Some("secret"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["p"], 0.0);

    // no token configured: admin is closed to everyone
    let open = router(gate(&bed, DefenseConfig::default()), &ServeSection::default());
    assert_eq!(call(&open, get("/v1/stats", Some(""))).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn p_zero_after_admin_change_is_passthrough() {
    let bed = small_testbed();
    let app = router(gate(&bed, DefenseConfig { p: 1.0, ..Default::default() }), &serve_cfg());
    call(&app, post("/v1/admin/config", r#"{"p":0}"#, Some("secret"))).await;
    let rows: Vec<Vec<f64>> = (0..50).map(|i| far_row(bed.test.dim(), i)).collect();
    let (_, body) = call(&app, post("/v1/predict", inputs_body(&rows), None)).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    let want = bed.victim.forward(&oodgate::Matrix::from_rows(&rows).unwrap()).unwrap();
    for (i, o) in v["outputs"].as_array().unwrap().iter().enumerate() {
        let got: Vec<f64> = o["logits"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(got, want.row(i));
    }
}

#[tokio::test]
async fn randomization_rate_from_stats_deltas() {
    let bed = small_testbed();
    let app = router(gate(&bed, DefenseConfig::default()), &serve_cfg());
    let d = bed.test.dim();
    let n = 10_000;
    for start in (0..n).step_by(MAX_BATCH) {
        let rows: Vec<Vec<f64>> = (start..(start + MAX_BATCH).min(n)).map(|i| far_row(d, i)).collect();
        assert_eq!(call(&app, post("/v1/predict", inputs_body(&rows), None)).await.0, StatusCode::OK);
    }
    let v: Value = serde_json::from_slice(&call(&app, get("/v1/stats", Some("secret"))).await.1).unwrap();
    assert_eq!(v["queries_total"], n as u64);
    assert_eq!(v["ood_flagged"], n as u64);
    let rate = v["randomized"].as_f64().unwrap() / n as f64;
    assert!((rate - 0.7).abs() <= 0.02, "{rate}");
}
