use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use xmod_cli::server::router;
use xmod_core::analysis::read_records_csv;
use xmod_core::harness::SessionService;
use xmod_core::protocol::ProtocolConfig;

fn app() -> Router {
    let svc = SessionService::with_clock(ProtocolConfig::default(), 5, Arc::new(|| 1_000)).unwrap();
    router(Arc::new(Mutex::new(svc)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn correct_key(trial: &Value) -> &'static str {
    match trial["target_side"].as_str().unwrap() {
        "left" => "left",
        _ => "right",
    }
}

/// Answers every remaining trial in the current phase; the first `wrong`
/// are answered incorrectly.
async fn answer_phase(app: &Router, id: &str, wrong: usize) -> usize {
    let mut n = 0;
    loop {
        let (s, t) = json_call(app, "GET", &format!("/sessions/{id}/next"), None).await;
        if s != StatusCode::OK {
            return n;
        }
        let key = if n < wrong {
            if correct_key(&t) == "left" { "right" } else { "left" }
        } else {
            correct_key(&t)
        };
        let body = json!({"trial_id": t["trial_id"], "response": key, "rt_us": 400_000 + n as u64});
        let (s, ack) = json_call(app, "POST", &format!("/sessions/{id}/responses"), Some(body)).await;
        assert_eq!(s, StatusCode::OK, "{ack}");
        n += 1;
        if ack["remaining"] == 0 {
            return n;
        }
    }
}

#[tokio::test]
async fn full_session_over_http() {
    let app = app();
    let (s, created) = json_call(&app, "POST", "/sessions", Some(json!({"participant_id": "p01"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(created["practice_trials"], 30);
    assert_eq!(created["phase"], "practice");
    let id = created["session_id"].as_str().unwrap().to_string();

    let (s, t) = json_call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, wav) = call(&app, "GET", t["audio_url"].as_str().unwrap(), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&wav[..4], b"RIFF");

    // 27 of 30 correct is exactly the pass mark.
    assert_eq!(answer_phase(&app, &id, 3).await, 30);
    let (s, adv) = json_call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(adv["pass"], true);
    assert_eq!(adv["phase"], "formal");

    assert_eq!(answer_phase(&app, &id, 0).await, 288);
    let (s, csv) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let records = read_records_csv(csv.as_slice()).unwrap();
    assert_eq!(records.len(), 288);
    assert!(records.iter().all(|r| r.correct));
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app();
    let (s, _) = json_call(&app, "GET", "/sessions/nope/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, created) = json_call(&app, "POST", "/sessions", Some(json!({"participant_id": "p02"}))).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    let (s, _) = json_call(&app, "POST", "/sessions", Some(json!({"participant_id": "p02"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, t) = json_call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let wrong_id = t["trial_id"].as_u64().unwrap() + 1;
    let (s, e) = json_call(
        &app,
        "POST",
        &format!("/sessions/{id}/responses"),
        Some(json!({"trial_id": wrong_id, "response": "left", "rt_us": 1})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(e["error"].is_string());

    let (s, _) = json_call(
        &app,
        "POST",
        &format!("/sessions/{id}/responses"),
        Some(json!({"trial_id": t["trial_id"], "response": "left"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn failed_gate_keeps_practice() {
    let app = app();
    let (_, created) = json_call(&app, "POST", "/sessions", Some(json!({"participant_id": "p03"}))).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    answer_phase(&app, &id, 4).await;
    let (s, adv) = json_call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(adv["pass"], false);
    assert_eq!(adv["phase"], "practice");
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
}
