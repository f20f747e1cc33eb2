#![allow(dead_code)]

use std::collections::HashMap;

use autodo_controller::{start, ControllerConfig, Running};
use autodo_core::catalog::seed;
use axum::routing::post;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

pub const ALICE: &str = "alice-token";
pub const BOB: &str = "bob-token";

pub struct Harness {
    pub running: Running,
    pub http: reqwest::Client,
    /// Custom-cluster endpoint that accepts descriptors and does nothing,
    /// leaving the job launched for the test to drive.
    pub idle_endpoint: String,
    _dir: TempDir,
}

pub async fn harness(pool: usize) -> Harness {
    harness_with(pool, |_| {}).await
}

pub async fn harness_with(pool: usize, tweak: impl FnOnce(&mut ControllerConfig)) -> Harness {
    let dir = TempDir::new().unwrap();
    let mut config = ControllerConfig::new(dir.path().join("autodo.db"));
    config.bind_addr = "127.0.0.1:0".into();
    config.shared_pool_size = pool;
    config.user_tokens = HashMap::from([(ALICE.into(), "alice".into()), (BOB.into(), "bob".into())]);
    tweak(&mut config);
    let running = start(config).await.unwrap();

    let idle = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let idle_endpoint = format!("http://{}/launch", idle.local_addr().unwrap());
    tokio::spawn(async move {
        let app = axum::Router::new().route("/launch", post(|| async { "ok" }));
        axum::serve(idle, app).await.unwrap();
    });
    Harness {
        running,
        http: reqwest::Client::new(),
        idle_endpoint,
        _dir: dir,
    }
}

impl Harness {
    pub fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.running.url())
    }

    pub async fn send(&self, req: reqwest::RequestBuilder) -> (StatusCode, Value) {
        let r = req.send().await.unwrap();
        let status = r.status();
        let text = r.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub async fn post(&self, token: &str, path: &str, body: Value) -> (StatusCode, Value) {
        self.send(self.http.post(self.url(path)).bearer_auth(token).json(&body)).await
    }

    pub async fn post_text(&self, token: &str, path: &str, body: &str) -> (StatusCode, Value) {
        self.send(self.http.post(self.url(path)).bearer_auth(token).body(body.to_string()))
            .await
    }

    pub async fn get(&self, token: &str, path: &str) -> (StatusCode, Value) {
        self.send(self.http.get(self.url(path)).bearer_auth(token)).await
    }

    /// Raw SSE body; returns once the server ends the stream.
    pub async fn sse(&self, token: &str, job: &str, from_seq: u64) -> String {
        self.http
            .get(self.url(&format!("/jobs/{job}/events?from_seq={from_seq}")))
            .bearer_auth(token)
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap()
    }

    pub async fn project(&self, token: &str, name: &str) -> String {
        let (s, v) = self.post(token, "/projects", json!({ "name": name })).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    pub async fn gym(&self, token: &str, project: &str, spec: &str) -> String {
        let (s, v) = self.post_text(token, &format!("/projects/{project}/gyms"), spec).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["gym_id"].as_str().unwrap().to_string()
    }

    pub async fn config(&self, token: &str, project: &str, config: Value, share: bool) -> String {
        let (s, v) = self
            .post(token, "/configs", json!({ "project_id": project, "config": config, "share": share }))
            .await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["config_id"].as_str().unwrap().to_string()
    }

    pub async fn job(&self, token: &str, project: &str, gym: &str, config: &str, cluster: Value) -> (String, String) {
        let (s, v) = self
            .post(
                token,
                &format!("/projects/{project}/jobs"),
                json!({ "gym_id": gym, "config_id": config, "cluster": cluster }),
            )
            .await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        (v["job_id"].as_str().unwrap().to_string(), v["api_token"].as_str().unwrap().to_string())
    }

    /// A launched gridworld job parked on the idle endpoint, with its token.
    pub async fn idle_job(&self) -> (String, String) {
        let p = self.project(ALICE, &format!("p-{}", uuid_like())).await;
        let g = self.gym(ALICE, &p, seed::GRIDWORLD).await;
        let c = self.config(ALICE, &p, small_config(3), false).await;
        let (j, t) = self
            .job(ALICE, &p, &g, &c, json!({ "kind": "custom", "endpoint": self.idle_endpoint }))
            .await;
        let (s, v) = self.post(ALICE, &format!("/jobs/{j}/launch"), json!({})).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        (j, t)
    }

    pub async fn append(&self, job: &str, token: &str, kind: &str, payload: Value) -> (StatusCode, Value) {
        self.post(token, &format!("/jobs/{job}/events"), json!({ "kind": kind, "payload": payload }))
            .await
    }
}

fn uuid_like() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static N: AtomicU64 = AtomicU64::new(0);
    format!("{}-{}", std::process::id(), N.fetch_add(1, Ordering::SeqCst))
}

pub fn small_config(budget: usize) -> Value {
    json!({
        "enabled_agents": ["q_learning", "random_policy"],
        "search_strategy": "discrepancy_grid",
        "candidate_budget": budget,
        "optimization_workers": 2,
        "episodes_train": 60,
        "episodes_eval": 2,
        "top_k": 2,
        "seed": 1
    })
}

/// Frames of an SSE body with keep-alive comments removed.
pub fn frames(body: &str) -> Vec<String> {
    body.split("\n\n")
        .map(|f| {
            f.lines()
                .filter(|l| !l.starts_with(':'))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .filter(|f| !f.is_empty())
        .collect()
}

/// Parsed `data` of every non-end frame.
pub fn frame_events(body: &str) -> Vec<Value> {
    frames(body)
        .iter()
        .filter(|f| !f.contains("event: end"))
        .map(|f| {
            let data: String = f
                .lines()
                .filter_map(|l| l.strip_prefix("data: ").or_else(|| l.strip_prefix("data:")))
                .collect();
            serde_json::from_str(&data).unwrap()
        })
        .collect()
}
