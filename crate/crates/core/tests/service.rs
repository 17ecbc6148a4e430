mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gends::corpus::Vocabulary;
use gends::inference::{DecodeOptions, Engine};
use gends::model::{Model, ModelConfig, Variant};
use gends::service::{reply, router, AppState, ReplyRequest};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn engine() -> Engine {
    let (kb, ds) = common::corpus(3);
    let vocab = Vocabulary::build(&ds, &kb, 1).unwrap();
    let model = Model::new(
        ModelConfig::with_dims(8, Variant::Full),
        vocab.common_len(),
        &mut ChaCha8Rng::seed_from_u64(3),
    );
    Engine::new(model, vocab, kb).unwrap()
}

fn opts() -> DecodeOptions {
    DecodeOptions {
        max_len: 12,
        ..DecodeOptions::default()
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: impl Into<Body>) -> Request<Body> {
    Request::post("/reply")
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap()
}

fn first_message() -> String {
    let (_, ds) = common::corpus(3);
    ds.pairs[0].message_tokens.join(" ")
}

#[tokio::test]
async fn health_reports_loading_then_ok() {
    let state = AppState::loading(opts());
    let app = router(state.clone());
    let (status, body) = call(&app, get("/health")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");

    let (status, _) = call(&app, post(json!({"message": "hi"}).to_string())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    state.install(engine(), "full-abc");
    let (status, body) = call(&app, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "model_version": "full-abc"}));
}

#[tokio::test]
async fn reply_has_the_documented_shape() {
    let app = router(AppState::ready(engine(), "v", opts()));
    let body = json!({"message": first_message(), "session_id": "s-1"}).to_string();
    let (status, v) = call(&app, post(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(v["response_text"].is_string());
    assert!(v["score"].as_f64().unwrap() <= 0.0);
    assert_eq!(v["session_id"], "s-1");
    let trace = v["gate_trace"].as_array().unwrap();
    assert!(!trace.is_empty() && trace.len() <= 12);
    assert!(trace.iter().all(|g| (0.0..=1.0).contains(&g.as_f64().unwrap())));
    for e in v["entities"].as_array().unwrap() {
        for key in ["surface", "type", "predicate", "position"] {
            assert!(!e[key].is_null(), "missing {key}");
        }
    }

    let (_, without) = call(&app, post(json!({"message": "hello"}).to_string())).await;
    assert!(without.get("session_id").is_none());
}

#[tokio::test]
async fn identical_requests_get_identical_bodies() {
    let app = router(AppState::ready(engine(), "v", opts()));
    let body = json!({"message": first_message()}).to_string();
    let a = call(&app, post(body.clone())).await;
    let b = call(&app, post(body)).await;
    assert_eq!(a, b);

    let direct = reply(
        &engine(),
        ReplyRequest {
            message: first_message(),
            session_id: None,
        },
        &opts(),
    )
    .unwrap();
    // both sides go through the same text parse
    let direct: Value = serde_json::from_str(&serde_json::to_string(&direct).unwrap()).unwrap();
    assert_eq!(direct, a.1);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let app = router(AppState::ready(engine(), "v", opts()));
    let (status, v) = call(&app, post("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());

    let (status, _) = call(&app, post(json!({"text": "x"}).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, post(json!({"message": "   "}).to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let long = vec!["word"; 1001].join(" ");
    let (status, _) = call(&app, post(json!({"message": long}).to_string())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);

    let limit = vec!["word"; 1000].join(" ");
    let (status, _) = call(&app, post(json!({"message": limit}).to_string())).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn entity_lookup_filters_by_prefix() {
    let e = engine();
    let kb = e.kb.clone();
    let some = kb.entities().next().unwrap().clone();
    let prefix: String = some.surface_forms[0][0].chars().take(2).collect();
    let app = router(AppState::ready(e, "v", opts()));

    let (status, v) = call(&app, get(&format!("/kb/entities?q={prefix}"))).await;
    assert_eq!(status, StatusCode::OK);
    let hits = v.as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() <= 50);
    assert!(hits.iter().any(|h| h["id"] == some.id.as_str()));
    for h in hits {
        assert!(h["type"].is_string());
        let ent = kb.entity(&gends::kb::EntityId::new(h["id"].as_str().unwrap())).unwrap();
        assert!(ent.surface_forms.iter().any(|f| f.join(" ").starts_with(&prefix)), "{h}");
    }

    let (_, none) = call(&app, get("/kb/entities?q=zzzzzz")).await;
    assert_eq!(none, json!([]));
    let (_, all) = call(&app, get("/kb/entities")).await;
    assert_eq!(all.as_array().unwrap().len(), 50);

    let loading = router(AppState::loading(opts()));
    let (status, _) = call(&loading, get("/kb/entities?q=a")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}
