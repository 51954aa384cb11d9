//! Bundle a flow with its cached responses and reopen it elsewhere without
//! sending a single query.

use forge::demo::{offline_workspace, teaser_flow};
use forge::flow::load_flow;
use forge::provider::MockConfig;
use forge::service::share_hash;
use forge::workspace::RunRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ws, _) = offline_workspace(MockConfig::default());
    let doc = teaser_flow();
    ws.run(&doc, &RunRequest::new("attack"), None).await?;
    let bundle = ws.bundle(&doc).await?;
    println!("share {} ({} bytes)", share_hash(&bundle), bundle.len());

    let (elsewhere, mock) = offline_workspace(MockConfig::default());
    let opened = load_flow(&bundle)?;
    elsewhere.import_embedded(&opened)?;
    let plan = elsewhere.plan(&opened, &RunRequest::new("attack")).await?;
    let records = elsewhere.responses(&opened, "attack").await?;
    println!("{} responses, {} pending, {} calls", records.len(), plan.pending, mock.call_count());
    Ok(())
}
