//! The local HTTP service on an ephemeral port, driven by a client: create a
//! flow, plan it, run it and follow progress over server-sent events.

use std::sync::Arc;

use forge::demo::teaser_flow;
use forge::engine::{Clock, Dispatcher, SystemClock};
use forge::flow::save_flow;
use forge::provider::{MockConfig, MockProvider, ProviderRegistry, MOCK_PROVIDER_ID};
use forge::service::{serve_on, AppState};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = ProviderRegistry::new();
    registry.register(Arc::new(MockProvider::new(MOCK_PROVIDER_ID, MockConfig::default())));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let dispatcher = Arc::new(Dispatcher::new(Arc::new(registry), clock));
    let dir = tempfile::tempdir()?;
    let state = Arc::new(AppState::new(dispatcher, dir.path()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve_on(listener, state));

    let http = reqwest::Client::new();
    let created: Value = http.post(format!("{base}/flows")).body(save_flow(&teaser_flow(), false)).send().await?.json().await?;
    let id = created["id"].as_str().unwrap_or_default().to_string();
    let plan: Value = http.post(format!("{base}/flows/{id}/plan")).json(&json!({"node_id": "prompt"})).send().await?.json().await?;
    println!("plan: total {}, pending {}", plan["total"], plan["pending"]);

    let run: Value = http.post(format!("{base}/flows/{id}/run")).json(&json!({"node_id": "prompt"})).send().await?.json().await?;
    let events = http.get(format!("{base}/runs/{}/events", run["run_id"].as_str().unwrap_or_default())).send().await?.text().await?;
    let names: Vec<&str> = events.lines().filter_map(|l| l.strip_prefix("event:")).map(str::trim).collect();
    println!("{} progress events, then {:?}", names.len() - 1, names.last());

    let vis: Value = http.get(format!("{base}/flows/{id}/nodes/attack/vis")).send().await?.json().await?;
    println!("vis kind {}, x = {}", vis["kind"], vis["x"]);
    Ok(())
}
