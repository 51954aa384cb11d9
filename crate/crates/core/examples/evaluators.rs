//! Simple, expression, LLM and external evaluators over the same responses.

use forge::demo::{chained_flow, offline_workspace};
use forge::flow::{NodeKind, OUTPUT_HANDLE, RESPONSES_HANDLE};
use forge::provider::MockConfig;
use forge::workspace::RunRequest;
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ws, _) = offline_workspace(MockConfig::default());
    let ws = ws.with_eval_command(Some(
        r#"while read -r l; do printf '{"score": %d}\n' "${#l}"; done"#.into(),
    ));
    let doc = chained_flow()
        .with_node("has_a", NodeKind::SimpleEvaluator, json!({"predicate": "contains", "target": {"constant": "a"}}))
        .with_node("words", NodeKind::ExpressionEvaluator, json!({"expression": "word_count(text)"}))
        .with_node("judge", NodeKind::LlmScorer, json!({"scorer_prompt": "Is this funny? Answer true or false. {input}"}))
        .with_node("line_len", NodeKind::ExternalEvaluator, json!({}))
        .with_edge("prompt", OUTPUT_HANDLE, "has_a", RESPONSES_HANDLE)
        .with_edge("prompt", OUTPUT_HANDLE, "words", RESPONSES_HANDLE)
        .with_edge("prompt", OUTPUT_HANDLE, "judge", RESPONSES_HANDLE)
        .with_edge("prompt", OUTPUT_HANDLE, "line_len", RESPONSES_HANDLE);

    for node in ["has_a", "words", "judge", "line_len"] {
        ws.run(&doc, &RunRequest::new(node), None).await?;
        let records = ws.responses(&doc, node).await?;
        let r = &records[0];
        let text: String = r.text().chars().take(40).collect();
        let score: String = r.scores[node].value.render().chars().take(40).collect();
        println!("{node:<9} {text:<40} -> {score}");
    }
    Ok(())
}
