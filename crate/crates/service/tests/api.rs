use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cvil_core::dataset::write_export_csv;
use cvil_core::session::{Session, SessionConfig};
use cvil_core::simulation::synthetic::{gaussian_blobs, BlobSpec};
use cvil_core::EmbeddingDataset;
use cvil_service::api::{router, wait_idle, AppState};

fn dataset() -> EmbeddingDataset {
    gaussian_blobs(&BlobSpec {
        per_class: vec![40, 40, 40],
        dim: 4,
        centers: None,
        spread: 5.0,
        std: 1.0,
        seed: 7,
    })
}

fn app_with(state: AppState) -> (Router, Arc<AppState>) {
    let state = Arc::new(state);
    (router(Arc::clone(&state)), state)
}

fn app() -> (Router, Arc<AppState>) {
    app_with(AppState::new(Session::new(Arc::new(dataset()), SessionConfig::default())))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).expect("JSON envelope"))
}

/// One instance label per class from ground truth, then a finished retrain.
async fn trained(app: &Router, state: &AppState) {
    let ds = dataset();
    let gt = ds.ground_truth().unwrap();
    for c in 0..3u32 {
        for i in (0..ds.len()).filter(|&i| gt[i].0 == c).take(2) {
            let (status, _) = call(app, "POST", "/api/labels/instance", Some(json!({"id": ds.id(i), "class": c}))).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    let (status, body) = call(app, "POST", "/api/retrain", Some(json!({"seed": 3}))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert_eq!(body["data"]["job"]["seed"], 3);
    wait_idle(state).await;
}

#[tokio::test]
async fn cold_status_reports_untrained() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["ok"], true);
    assert_eq!(body["data"]["trained"], false);
    assert_eq!(body["session_sequence"], 0);

    let (_, summary) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(summary["data"]["instances"], 120);
    assert_eq!(summary["data"]["classes"].as_array().unwrap().len(), 3);
    assert!(summary["data"].get("ground_truth").is_none());

    let (status, body) = call(&app, "GET", "/api/classes/0/density", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "untrained");
    let (status, body) = call(&app, "GET", "/api/export", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "untrained");
}

#[tokio::test]
async fn labeling_round_trip() {
    let (app, state) = app();
    trained(&app, &state).await;

    let (_, status) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(status["data"]["trained"], true);
    assert_eq!(status["data"]["status"], "idle");
    assert_eq!(status["data"]["last_training"]["instance_examples"], 6);
    assert_eq!(status["session_sequence"], 7);

    let (_, density) = call(&app, "GET", "/api/classes/0/density", None).await;
    let curve = &density["data"];
    assert_eq!(curve["class_id"], 0);
    assert_eq!(curve["x"].as_array().unwrap().len(), curve["y"].as_array().unwrap().len());

    let (status, preview) = call(&app, "GET", "/api/classes/0/preview?lo=0&hi=1&limit=5", None).await;
    assert_eq!(status, StatusCode::OK);
    let items = preview["data"]["items"].as_array().unwrap();
    assert!(items.len() <= 5);
    let total = preview["data"]["total"].as_u64().unwrap();
    assert!(total >= items.len() as u64);
    let values: Vec<f64> = items.iter().map(|i| i["value"].as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]), "{values:?}");

    let (_, hover) = call(&app, "GET", "/api/classes/0/hover?value=1&limit=500", None).await;
    assert_eq!(hover["data"]["total"], preview["data"]["total"]);

    let mismatch = json!({"class": 0, "lo": 0.0, "hi": 1.0, "target_class": 1, "override": false});
    let (status, body) = call(&app, "POST", "/api/labels/batch", Some(mismatch)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "class_mismatch");
    assert_eq!(body["session_sequence"], 7);

    let batch = json!({"class": 0, "lo": 0.0, "hi": 1.0, "target_class": 0});
    let (status, body) = call(&app, "POST", "/api/labels/batch", Some(batch)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["data"]["labeled"], total);
    assert_eq!(body["session_sequence"], 8);

    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(stats["data"]["per_class"][0]["batch"], total);
    assert_eq!(stats["data"]["labels"]["batch"], total);

    let (status, body) = call(&app, "POST", "/api/measure", Some(json!({"measure": "disagreement"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, summary) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(summary["data"]["measure"], "disagreement");
}

#[tokio::test]
async fn retrain_while_training_is_busy() {
    let (app, state) = app();
    let _job = state.session().write().begin_retrain(0).unwrap();
    let (status, body) = call(&app, "POST", "/api/retrain", Some(json!({"seed": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "busy");
    let (status, body) = call(&app, "POST", "/api/labels/instance", Some(json!({"id": "0", "class": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "busy");
    let (_, status) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(status["data"]["status"], "training");
}

#[tokio::test]
async fn failed_retrain_is_reported() {
    let (app, state) = app();
    let (status, _) = call(&app, "POST", "/api/retrain", Some(json!({}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    wait_idle(&state).await;
    let (_, body) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(body["data"]["trained"], false);
    assert!(body["data"]["last_error"].as_str().unwrap().contains("label"));
    assert_eq!(body["session_sequence"], 0);
}

#[tokio::test]
async fn stale_mutations_conflict_instead_of_repeating() {
    let (app, state) = app();
    let label = json!({"id": "5", "class": 1, "expected_sequence": 0});
    let (status, _) = call(&app, "POST", "/api/labels/instance", Some(label.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", "/api/labels/instance", Some(label)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "stale_sequence");
    assert_eq!(body["session_sequence"], 1);
    assert_eq!(state.session().read().log().len(), 1);

    trained(&app, &state).await;
    let seq = state.session().read().sequence();
    let batch = json!({"class": 2, "lo": 0.0, "hi": 1.0, "target_class": 2, "expected_sequence": seq});
    let (status, _) = call(&app, "POST", "/api/labels/batch", Some(batch.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", "/api/labels/batch", Some(batch)).await;
    assert_eq!(body["error"]["code"], "stale_sequence");
    assert_eq!(status, StatusCode::CONFLICT);

    let seq = seq + 1;
    let measure = json!({"measure": "eccentricity", "expected_sequence": seq});
    assert_eq!(call(&app, "POST", "/api/measure", Some(measure.clone())).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", "/api/measure", Some(measure)).await.1["error"]["code"], "stale_sequence");

    let retrain = json!({"seed": 9, "expected_sequence": seq + 1});
    assert_eq!(call(&app, "POST", "/api/retrain", Some(retrain.clone())).await.0, StatusCode::ACCEPTED);
    wait_idle(&state).await;
    assert_eq!(call(&app, "POST", "/api/retrain", Some(retrain)).await.1["error"]["code"], "stale_sequence");
    assert_eq!(state.session().read().sequence(), seq + 2);
}

#[tokio::test]
async fn reads_are_pure_and_export_matches_the_session() {
    let (app, state) = app();
    trained(&app, &state).await;
    for uri in [
        "/api/summary",
        "/api/status",
        "/api/stats",
        "/api/classes/1/density",
        "/api/classes/1/preview?lo=0&hi=0.7&limit=7",
        "/api/classes/1/hover?value=0.5&limit=3",
        "/api/export",
    ] {
        let a = send(&app, "GET", uri, None).await;
        let b = send(&app, "GET", uri, None).await;
        assert_eq!(a.0, StatusCode::OK, "{uri}");
        assert_eq!(a, b, "{uri}");
    }
    let (_, csv) = send(&app, "GET", "/api/export", None).await;
    let mut expected = Vec::new();
    write_export_csv(&state.session().read().export().unwrap(), &mut expected).unwrap();
    assert_eq!(csv, expected);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/api/classes/x/density", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "bad_request");
    let (status, body) = call(&app, "GET", "/api/classes/0/preview?lo=a", None).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::BAD_REQUEST, &json!("bad_request")));
    let (status, body) = call(&app, "POST", "/api/labels/instance", Some(json!({"id": 3}))).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::BAD_REQUEST, &json!("bad_request")));
    let (status, body) = call(&app, "POST", "/api/labels/instance", Some(json!({"id": "nope", "class": 0}))).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::NOT_FOUND, &json!("unknown_id")));
    let (status, body) = call(&app, "POST", "/api/labels/instance", Some(json!({"id": "1", "class": 9}))).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::NOT_FOUND, &json!("unknown_class")));
    let (status, body) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::NOT_FOUND, &json!("not_found")));
}

#[tokio::test]
async fn images_are_served_by_id() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("3.png"), b"\x89PNG fake").unwrap();
    let ds = dataset().with_images(dir.path()).unwrap();
    let session = Session::new(Arc::new(ds), SessionConfig::default());
    let (app, state) = app_with(AppState::new(session).with_images(dir.path().to_path_buf()));

    let response = app
        .clone()
        .oneshot(Request::get("/images/3").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    assert_eq!(response.headers()["content-type"], "image/png");
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"\x89PNG fake");

    let (status, body) = call(&app, "GET", "/images/4", None).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::NOT_FOUND, &json!("no_image")));
    let (status, body) = call(&app, "GET", "/images/missing", None).await;
    assert_eq!((status, &body["error"]["code"]), (StatusCode::NOT_FOUND, &json!("unknown_id")));

    trained(&app, &state).await;
    let (_, preview) = call(&app, "GET", "/api/classes/0/preview?lo=0&hi=1&limit=200", None).await;
    for item in preview["data"]["items"].as_array().unwrap() {
        let expected = if item["id"] == "3" { json!("/images/3") } else { Value::Null };
        assert_eq!(item["image_url"], expected);
    }
}

#[tokio::test]
async fn save_file_replays_to_the_same_session() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.jsonl");
    let ds = Arc::new(dataset());
    let session = Session::new(Arc::clone(&ds), SessionConfig::default());
    let (app, state) = app_with(AppState::new(session).with_save_path(path.clone(), None));
    trained(&app, &state).await;
    let batch = json!({"class": 1, "lo": 0.0, "hi": 0.9, "target_class": 1});
    assert_eq!(call(&app, "POST", "/api/labels/batch", Some(batch)).await.0, StatusCode::OK);

    let file = std::fs::File::open(&path).unwrap();
    let replayed = Session::replay(ds, std::io::BufReader::new(file)).unwrap();
    let live = state.session().read();
    assert_eq!(replayed.ledger(), live.ledger());
    assert_eq!(replayed.export().unwrap(), live.export().unwrap());
}
