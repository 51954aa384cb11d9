//! External-process scorer: one JSON line per response on stdin, one
//! `{"score": ...}` line back per response on stdout.

use std::process::Stdio;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::process::Command;

use super::ScoreValue;
use crate::engine::ResponseRecord;

pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalScorer {
    /// Shell command line, run with `sh -c`.
    pub command: String,
    /// Longest silence tolerated between output lines.
    pub timeout: Duration,
}

impl ExternalScorer {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalScorer {
            command: command.into(),
            timeout: EXTERNAL_TIMEOUT,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("could not start scorer: {0}")]
    Spawn(std::io::Error),
    #[error("scorer exited with status {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("scorer output line {line} is malformed: {message}")]
    Malformed { line: usize, message: String },
    #[error("scorer produced no output for {0:?}")]
    Timeout(Duration),
    #[error("scorer closed its output after {got} of {expected} lines")]
    TooFewLines { expected: usize, got: usize },
    #[error("scorer I/O error: {0}")]
    Io(std::io::Error),
}

/// A failed external run, with the scores received before the failure.
#[derive(Debug, Error)]
#[error("{reason}")]
pub struct ExternalEvalError {
    pub reason: ExternalError,
    pub partial: Vec<ScoreValue>,
}

fn request_line(r: &ResponseRecord) -> String {
    json!({
        "text": r.text(),
        "vars": r.fill_history,
        "meta": r.metadata,
        "model": r.model_alias(),
    })
    .to_string()
}

fn parse_line(line: &str, number: usize) -> Result<ScoreValue, ExternalError> {
    let malformed = |message: String| ExternalError::Malformed {
        line: number,
        message,
    };
    let v: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    match v.get("score") {
        Some(Value::Bool(b)) => Ok(ScoreValue::Bool(*b)),
        Some(Value::Number(n)) => Ok(ScoreValue::Number(n.as_f64().unwrap_or(f64::NAN))),
        Some(Value::String(s)) => Ok(ScoreValue::Text(s.clone())),
        Some(other) => Err(malformed(format!("unsupported score value {other}"))),
        None => Err(malformed("missing `score` field".into())),
    }
}

/// Runs the scorer once over all records with text. Records without text
/// get error scores and are not sent.
pub async fn external_eval(
    scorer: &ExternalScorer,
    records: &[ResponseRecord],
) -> Result<Vec<ScoreValue>, ExternalEvalError> {
    let sent: Vec<&ResponseRecord> = records.iter().filter(|r| r.is_success()).collect();
    let scores = run(scorer, &sent).await;
    let (received, failure) = match scores {
        Ok(s) => (s, None),
        Err(e) => (e.partial, Some(e.reason)),
    };

    let mut received = received.into_iter();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !r.is_success() {
            out.push(ScoreValue::error("response has no text to score"));
        } else if let Some(s) = received.next() {
            out.push(s);
        } else if failure.is_some() {
            break;
        }
    }
    match failure {
        None => Ok(out),
        Some(reason) => Err(ExternalEvalError {
            reason,
            partial: out,
        }),
    }
}

async fn run(scorer: &ExternalScorer, records: &[&ResponseRecord]) -> Result<Vec<ScoreValue>, ExternalEvalError> {
    let fail = |reason, partial| ExternalEvalError { reason, partial };
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&scorer.command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| fail(ExternalError::Spawn(e), vec![]))?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload: String = records.iter().map(|r| request_line(r) + "\n").collect();
    let writer = tokio::spawn(async move {
        // The scorer may exit without reading everything; that surfaces
        // through its exit status instead.
        let _ = stdin.write_all(payload.as_bytes()).await;
        let _ = stdin.shutdown().await;
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let stderr_task = tokio::spawn(async move {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf).await;
        buf
    });

    let mut lines = BufReader::new(child.stdout.take().expect("piped stdout")).lines();
    let mut scores = Vec::with_capacity(records.len());
    while scores.len() < records.len() {
        match tokio::time::timeout(scorer.timeout, lines.next_line()).await {
            Err(_) => {
                let _ = child.kill().await;
                return Err(fail(ExternalError::Timeout(scorer.timeout), scores));
            }
            Ok(Err(e)) => return Err(fail(ExternalError::Io(e), scores)),
            Ok(Ok(None)) => break,
            Ok(Ok(Some(line))) => match parse_line(&line, scores.len() + 1) {
                Ok(s) => scores.push(s),
                Err(e) => {
                    let _ = child.kill().await;
                    return Err(fail(e, scores));
                }
            },
        }
    }
    drop(lines);
    let _ = writer.await;

    let status = match tokio::time::timeout(scorer.timeout, child.wait()).await {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => return Err(fail(ExternalError::Io(e), scores)),
        Err(_) => {
            let _ = child.kill().await;
            return Err(fail(ExternalError::Timeout(scorer.timeout), scores));
        }
    };
    let stderr = stderr_task.await.unwrap_or_default();
    if !status.success() {
        return Err(fail(
            ExternalError::NonZeroExit {
                code: status.code(),
                stderr: stderr.trim().to_string(),
            },
            scores,
        ));
    }
    if scores.len() < records.len() {
        let got = scores.len();
        return Err(fail(
            ExternalError::TooFewLines {
                expected: records.len(),
                got,
            },
            scores,
        ));
    }
    Ok(scores)
}
