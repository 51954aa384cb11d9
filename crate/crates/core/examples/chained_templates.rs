//! Templates filled from other templates: 5 topics x 2 requests on 2 models.

use forge::demo::{chained_flow, offline_workspace};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ws, _) = offline_workspace(MockConfig::default());
    let doc = chained_flow();
    let report = ws.run(&doc, &RunRequest::new("prompt"), None).await?;
    println!("{} queries", report.dispatched.succeeded);
    for r in ws.responses(&doc, "prompt").await? {
        println!("{:<7} {:<32} topic={}", r.model_alias(), r.prompt, r.fill_history["topic"]);
    }
    Ok(())
}
