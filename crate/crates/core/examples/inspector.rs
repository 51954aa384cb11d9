//! Grouped and pivoted views of a response set.

use forge::analysis::{group_responses, pivot_table, GroupTree, MODEL_DIMENSION};
use forge::demo::{offline_workspace, teaser_flow};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ws, _) = offline_workspace(MockConfig::default());
    let doc = teaser_flow();
    ws.run(&doc, &RunRequest::new("prompt"), None).await?;
    let records = ws.responses(&doc, "inspect").await?;

    if let GroupTree::Groups(groups) = group_responses(&records, &["command".into()]) {
        for g in groups {
            println!("{} = {:?}: {} responses", g.variable, g.value, g.children.records().len());
        }
    }

    let table = pivot_table(&records, MODEL_DIMENSION);
    println!("rows by {:?}, columns {:?}", table.row_dimensions, table.columns);
    let first = &table.rows[0];
    for (model, cell) in table.columns.iter().zip(&first.cells) {
        println!("{model:>8}: {}", cell[0].text);
    }
    Ok(())
}
