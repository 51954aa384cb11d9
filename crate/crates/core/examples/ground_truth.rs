//! Tabular questions with ideal answers, scored with a metavariable and
//! split per command.

use forge::analysis::VisPoint;
use forge::demo::{ground_truth_canned, ground_truth_flow, offline_workspace};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let commands = ["Answer:", "Reply briefly:"];
    let canned = ground_truth_canned(&commands, |c, row| if c == 0 { row < 8 } else { row < 6 });
    let (ws, _) = offline_workspace(MockConfig {
        canned,
        ..Default::default()
    });
    let doc = ground_truth_flow(&commands);
    ws.run(&doc, &RunRequest::new("correct"), None).await?;

    let vis = ws.vis(&doc, "plot", None).await?;
    for s in &vis.series {
        if let Some(Some(VisPoint::Accuracy(a))) = s.points.first() {
            println!("{:<16} {}/{} = {:.2}", s.name, a.true_count, a.total, a.accuracy);
        }
    }
    Ok(())
}
