//! Deterministic CSV of responses with their scores.

use forge::demo::{offline_workspace, teaser_flow};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ws, _) = offline_workspace(MockConfig::default());
    let doc = teaser_flow();
    ws.run(&doc, &RunRequest::new("attack"), None).await?;
    let csv = ws.export_csv(&doc, "attack").await?;
    for line in String::from_utf8(csv)?.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
