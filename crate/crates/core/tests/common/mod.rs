#![allow(dead_code)]

use std::sync::Arc;

use forge::engine::{Clock, Dispatcher, ProgressEvent, ManualClock};
use forge::provider::{MockConfig, MockProvider, ProviderRegistry, MOCK_PROVIDER_ID};
use forge::service::{serve_on, AppState};
use serde_json::Value;

pub struct Server {
    pub base: String,
    pub mock: Arc<MockProvider>,
    pub client: reqwest::Client,
    _dir: tempfile::TempDir,
}

/// A service on an ephemeral loopback port, backed by the mock provider on a
/// virtual clock and a fresh data directory.
pub async fn spawn_server(config: MockConfig) -> Server {
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
    let mock = Arc::new(MockProvider::new(MOCK_PROVIDER_ID, config).with_clock(clock.clone()));
    let mut registry = ProviderRegistry::new();
    registry.register(mock.clone());
    let dispatcher = Arc::new(Dispatcher::new(Arc::new(registry), clock));
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::new(dispatcher, dir.path()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve_on(listener, state));
    Server {
        base,
        mock,
        client: reqwest::Client::new(),
        _dir: dir,
    }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn create(&self, bytes: Vec<u8>) -> String {
        let r = self.client.post(self.url("/flows")).body(bytes).send().await.unwrap();
        assert_eq!(r.status(), 201);
        r.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
    }

    pub async fn post_json(&self, path: &str, body: Value) -> reqwest::Response {
        self.client.post(self.url(path)).json(&body).send().await.unwrap()
    }

    pub async fn get_json(&self, path: &str) -> Value {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        assert!(r.status().is_success(), "{path}: {}", r.status());
        r.json().await.unwrap()
    }

    pub async fn plan(&self, flow: &str, node: &str) -> (u64, u64) {
        let v: Value = self
            .post_json(&format!("/flows/{flow}/plan"), serde_json::json!({"node_id": node}))
            .await
            .json()
            .await
            .unwrap();
        (v["total"].as_u64().unwrap(), v["pending"].as_u64().unwrap())
    }

    /// Starts a run and returns its id.
    pub async fn start_run(&self, flow: &str, body: Value) -> String {
        let r = self.post_json(&format!("/flows/{flow}/run"), body).await;
        assert_eq!(r.status(), 202);
        r.json::<Value>().await.unwrap()["run_id"].as_str().unwrap().to_string()
    }

    /// Reads a run's event stream to its end.
    pub async fn events(&self, run: &str) -> Vec<SseEvent> {
        let text = self
            .client
            .get(self.url(&format!("/runs/{run}/events")))
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap();
        parse_sse(&text)
    }

    /// Runs a node to completion; returns its progress events and the
    /// terminal event.
    pub async fn run(&self, flow: &str, node: &str) -> (Vec<ProgressEvent>, SseEvent) {
        let run = self.start_run(flow, serde_json::json!({"node_id": node})).await;
        split_events(self.events(&run).await)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseEvent {
    pub event: String,
    pub data: Value,
}

pub fn parse_sse(text: &str) -> Vec<SseEvent> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut event = String::from("message");
            let mut data = String::new();
            for line in block.lines() {
                if let Some(e) = line.strip_prefix("event:") {
                    event = e.trim().to_string();
                } else if let Some(d) = line.strip_prefix("data:") {
                    data.push_str(d.trim_start());
                }
            }
            if data.is_empty() {
                return None;
            }
            Some(SseEvent {
                event,
                data: serde_json::from_str(&data).unwrap(),
            })
        })
        .collect()
}

pub fn split_events(events: Vec<SseEvent>) -> (Vec<ProgressEvent>, SseEvent) {
    let (last, rest) = events.split_last().expect("at least a terminal event");
    let progress = rest
        .iter()
        .map(|e| {
            assert_eq!(e.event, "progress");
            serde_json::from_value(e.data.clone()).unwrap()
        })
        .collect();
    (progress, last.clone())
}

/// Per node, `completed` and `errored` never decrease.
pub fn monotone(events: &[ProgressEvent]) -> bool {
    let mut last: std::collections::HashMap<&str, (usize, usize)> = Default::default();
    events.iter().all(|e| {
        let prev = last.insert(&e.node_id, (e.completed, e.errored)).unwrap_or((0, 0));
        e.completed >= prev.0 && e.errored >= prev.1 && e.completed + e.errored <= e.total
    })
}
