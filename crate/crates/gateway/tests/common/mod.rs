#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use agriswarm_gateway::{router, AppState};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn sample_scenario() -> Value {
    serde_json::from_str(&fixture_text("sample-scenario.json")).unwrap()
}

pub struct Api {
    pub app: Router,
    pub state: AppState,
    pub dir: tempfile::TempDir,
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

impl Api {
    pub fn new() -> Api {
        let dir = tempfile::tempdir().unwrap();
        Api::at(dir)
    }

    pub fn at(dir: tempfile::TempDir) -> Api {
        let state = AppState::open(dir.path()).unwrap();
        Api {
            app: router(state.clone()),
            state,
            dir,
        }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<&str>, headers: &[(&str, &str)]) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, bytes }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None, &[]).await
    }

    pub async fn post(&self, uri: &str, body: &Value) -> Reply {
        self.call(Method::POST, uri, Some(&body.to_string()), &[]).await
    }

    pub async fn field(&self, name: &str) -> String {
        let r = self
            .call(Method::POST, "/api/fields", Some(&fixture_text(name)), &[])
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        r.json()["field_id"].as_str().unwrap().to_string()
    }

    pub async fn run(&self, body: Value) -> Value {
        let r = self.post("/api/runs", &body).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        r.json()
    }

    /// Polls the run handle until it reaches a final status.
    pub async fn wait_finished(&self, run_id: &str) -> Value {
        for _ in 0..6000 {
            let h = self.get(&format!("/api/runs/{run_id}")).await.json();
            if h["status"] == "done" || h["status"] == "aborted" {
                return h;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("run {run_id} did not finish");
    }

    pub async fn trace_events(&self, run_id: &str) -> Vec<String> {
        let r = self.get(&format!("/api/runs/{run_id}/trace")).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        let text = r.text();
        let lines: Vec<&str> = text.lines().collect();
        lines[1..lines.len() - 1].iter().map(|l| l.to_string()).collect()
    }
}

pub fn mission_body(field_id: &str, spacing: f64, threshold: f64) -> Value {
    json!({
        "field_id": field_id,
        "spacing": spacing,
        "threshold_pct": threshold,
        "fleet": [
            {"uav_id": 1, "drain_const": 0.05},
            {"uav_id": 2, "drain_const": 0.05},
        ],
    })
}
