#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use reasongraph_service::{mock_provider, router, AppState, Gateway, MockBehavior, MockTransport, Registry};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const COT_OUTPUT: &str = "Let me think.\n<step>7 times 8 is 7 added eight times</step>\n<step>that gives 56</step>\n<final_answer>56</final_answer>";

pub struct App {
    pub router: Router,
    pub mock: Arc<MockTransport>,
}

pub fn app_with(script: Vec<MockBehavior>, max_retries: u32, timeout_ms: Option<u64>) -> App {
    let mut profile = mock_provider(script);
    profile.max_retries = max_retries;
    if let Some(ms) = timeout_ms {
        profile.timeout = std::time::Duration::from_millis(ms);
    }
    let gateway = Gateway::new(Registry::from_profiles(vec![profile], |_| None).unwrap());
    let mock = gateway.mock("mock").unwrap();
    App {
        router: router(AppState::new(gateway)),
        mock,
    }
}

pub fn app(script: &[&str]) -> App {
    app_with(
        script.iter().map(|s| MockBehavior::Return(s.to_string())).collect(),
        2,
        None,
    )
}

pub async fn call(router: &Router, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(router, method, path, body.map(|b| b.to_string())).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn call_raw(router: &Router, method: &str, path: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub fn reason_body(method: &str) -> Value {
    json!({
        "question": "What is 7*8?",
        "method": method,
        "provider": "mock",
        "model": "mock",
    })
}

pub fn meta_body() -> Value {
    json!({ "question": "What is 7*8?", "provider": "mock", "model": "mock" })
}

/// Top-level keys every successful reasoning response carries.
pub const RESPONSE_KEYS: &[&str] = &[
    "analysis", "diagnostics", "diagram", "method_used", "raw_output", "selection_output",
    "stats", "timing", "trace",
];

pub fn assert_response_shape(v: &Value) {
    let obj = v.as_object().expect("object");
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, RESPONSE_KEYS);
    let timing = &v["timing"];
    for k in ["generation_ms", "parse_ms", "emit_ms"] {
        assert!(timing[k].as_f64().unwrap() >= 0.0, "{k}");
    }
    assert!(v["raw_output"].is_string());
    assert!(v["diagram"].is_string());
    assert!(v["diagnostics"].is_array());
    if !v["trace"].is_null() {
        let t = v["trace"].as_object().unwrap();
        for k in ["method", "nodes", "edges", "selected_path"] {
            assert!(t.contains_key(k), "trace missing {k}");
        }
    }
}

pub fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}
