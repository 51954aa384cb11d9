use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use forge::demo::{chained_flow, teaser_flow};
use forge::flow::{save_flow, FlowDocument, NodeKind};
use serde_json::json;

fn forge(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forge"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("FORGE_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().expect("forge runs")
}

fn write_flow(dir: &Path, name: &str, doc: &FlowDocument) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, save_flow(doc, false)).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn plan_then_run_then_plan() {
    let dir = tempfile::tempdir().unwrap();
    write_flow(dir.path(), "teaser.json", &teaser_flow());
    let o = forge(dir.path(), &["plan", "teaser.json", "--node", "prompt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "total 144, pending 144");

    let o = forge(dir.path(), &["run", "teaser.json", "--node", "prompt", "--export", "out.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("sent 144 queries: 144 succeeded, 0 failed"));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(csv.matches("\r\n").count(), 145);
    assert!(dir.path().join("teaser.cache").join("log.jsonl").exists());

    let o = forge(dir.path(), &["plan", "teaser.json", "--node", "prompt"]);
    assert_eq!(stdout(&o).trim(), "total 144, pending 0");
}

#[test]
fn missing_key_names_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let doc = chained_flow();
    let mut doc = doc;
    doc.node_mut("prompt").unwrap().data = json!({
        "template": "{request}",
        "models": [{"provider": "openai", "model": "gpt-4o"}]
    });
    write_flow(dir.path(), "f.json", &doc);
    let o = forge(dir.path(), &["run", "f.json", "--node", "prompt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FORGE_OPENAI_KEY"), "{}", stderr(&o));
}

#[test]
fn keys_file_satisfies_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = chained_flow();
    doc.node_mut("prompt").unwrap().data = json!({
        "template": "{request}",
        "models": [{"provider": "openai", "model": "gpt-4o"}]
    });
    write_flow(dir.path(), "f.json", &doc);
    std::fs::write(dir.path().join("keys.env"), "FORGE_OPENAI_KEY=sk-test\n").unwrap();
    let o = forge(dir.path(), &["plan", "f.json", "--node", "prompt", "--keys", "keys.env"]);
    assert_eq!(stdout(&o).trim(), "total 10, pending 10");
}

#[test]
fn injected_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_flow(dir.path(), "f.json", &chained_flow());
    std::fs::write(
        dir.path().join("providers.json"),
        json!({"mock": {"fail_pattern": "chess", "fail_kind": "bad_request"}}).to_string(),
    )
    .unwrap();
    let o = forge(dir.path(), &["run", "f.json", "--node", "prompt", "--providers", "providers.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("16 succeeded, 4 failed"), "{}", stdout(&o));
}

#[test]
fn invalid_flow_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"version\": \"1\", \"nodes\": [").unwrap();
    let o = forge(dir.path(), &["plan", "bad.json", "--node", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line"));

    let doc = FlowDocument::new()
        .with_node("a", NodeKind::TextFields, json!({"fields": [{"text": "x"}]}))
        .with_node("b", NodeKind::Vis, json!({}))
        .with_edge("a", "output", "b", "responses");
    write_flow(dir.path(), "edge.json", &doc);
    let o = forge(dir.path(), &["plan", "edge.json", "--node", "b"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn export_and_share_reuse_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    write_flow(dir.path(), "f.json", &chained_flow());
    assert!(forge(dir.path(), &["run", "f.json", "--node", "prompt"]).status.success());
    let a = forge(dir.path(), &["export", "f.json"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a).matches("\r\n").count(), 21);

    let s1 = forge(dir.path(), &["share", "f.json"]);
    let s2 = forge(dir.path(), &["share", "f.json"]);
    let hash = stdout(&s1).trim().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(hash, stdout(&s2).trim());
    let shared = dir.path().join("shares").join(format!("{hash}.json"));
    let copy = dir.path().join("copy.json");
    std::fs::copy(&shared, &copy).unwrap();
    let o = forge(dir.path(), &["plan", "copy.json", "--node", "prompt"]);
    assert_eq!(stdout(&o).trim(), "total 20, pending 0");
    let b = forge(dir.path(), &["export", "copy.json", "--node", "prompt"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn serve_refuses_remote_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(dir.path(), &["serve", "--host", "0.0.0.0", "--port", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--allow-remote"));
}
