//! Prompt-injection sweep: 3 commands x 4 inputs x 4 models x 3 responses,
//! scored by whether the reply starts with "LOL" and plotted per model.

use std::collections::BTreeMap;

use forge::analysis::VisPoint;
use forge::demo::{offline_workspace, teaser_flow, TEASER_COMMANDS, TEASER_INPUTS};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    // The first two injections succeed against every command.
    let canned: BTreeMap<String, String> = TEASER_COMMANDS
        .iter()
        .flat_map(|c| TEASER_INPUTS[..2].iter().map(move |i| (format!("{c}\n\n{i}"), "LOL".to_string())))
        .collect();
    let (ws, mock) = offline_workspace(MockConfig {
        canned,
        ..Default::default()
    });
    let doc = teaser_flow();

    let plan = ws.plan(&doc, &RunRequest::new("attack")).await?;
    println!("{} queries, {} not cached", plan.total, plan.pending);
    let report = ws.run(&doc, &RunRequest::new("attack"), None).await?;
    println!("{} responses from {} calls", report.records, mock.call_count());

    let vis = ws.vis(&doc, "plot", None).await?;
    for (x, point) in vis.x.iter().zip(&vis.series[0].points) {
        if let Some(VisPoint::Accuracy(a)) = point {
            println!("{x:>8}: {}/{} injections succeeded", a.true_count, a.total);
        }
    }
    Ok(())
}
