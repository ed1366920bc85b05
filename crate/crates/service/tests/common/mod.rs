#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use prefchat_core::generation::ScoredCandidate;
use prefchat_core::DialogueContext;
use prefchat_service::{build_state, router, AppState, CandidateGenerator, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

/// Deterministic candidates "t{turns} c{i}" with the last one scored highest.
pub struct Stub {
    pub delay: Duration,
}

impl CandidateGenerator for Stub {
    fn generate(&mut self, ctx: &DialogueContext, _seed: u64) -> prefchat_core::Result<Vec<ScoredCandidate>> {
        std::thread::sleep(self.delay);
        Ok((0..7)
            .map(|i| ScoredCandidate {
                text: format!("t{} c{i}", ctx.len()),
                preference_score: i as f64,
                generation_logprob: -1.0,
                token_count: 5,
                step_logprobs: vec![],
            })
            .collect())
    }
}

pub fn state(dir: &std::path::Path, delay: Duration) -> Arc<AppState> {
    let cfg = ServiceConfig { data_dir: dir.to_path_buf(), ..Default::default() };
    build_state(&cfg, Stub { delay }).unwrap()
}

pub async fn call(app: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(app.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let json = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, json, text)
}
