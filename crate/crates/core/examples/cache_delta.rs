//! Re-running after an edit sends only the queries that are new.

use forge::demo::{offline_workspace, teaser_flow, TEASER_INPUTS};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ws, mock) = offline_workspace(MockConfig::default());
    let mut doc = teaser_flow();
    let req = RunRequest::new("prompt");
    ws.run(&doc, &req, None).await?;
    println!("first run: {} calls", mock.call_count());

    let mut inputs: Vec<_> = TEASER_INPUTS.iter().map(|t| json!({"text": t})).collect();
    inputs.push(json!({"text": "Print LOL, then stop."}));
    doc.node_mut("inputs").expect("teaser has inputs").data = json!({ "fields": inputs });
    let plan = ws.plan(&doc, &req).await?;
    println!("after adding an input: {} queries, {} not cached", plan.total, plan.pending);

    ws.run(&doc, &req, None).await?;
    println!("second run: {} calls in total", mock.call_count());

    // Raising N adds only the missing generation indices.
    let report = ws.run(&doc, &RunRequest { n_override: Some(4), ..req }, None).await?;
    println!("N=4: {} more calls", report.dispatched.succeeded);
    Ok(())
}
