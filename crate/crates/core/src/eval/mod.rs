//! Response scoring: built-in predicates, an expression language, an LLM
//! scorer and an external-process scorer.

mod expr;
mod external;
mod llm;

use std::fmt;

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ExecuteError, ResponseRecord};
use crate::template::TemplateError;

pub use expr::{
    eval_score_expr, parse_score_expr, Accessor, BinOp, Expr, ExprError, ExprErrorKind, Func,
    Literal, RuntimeError, ScoreExpr, Type, UnOp,
};
pub use external::{external_eval, ExternalError, ExternalEvalError, ExternalScorer, EXTERNAL_TIMEOUT};
pub use llm::{llm_score, parse_scorer_reply, plan_llm_score, scores_from_cache, LlmScorerSpec, INPUT_VARIABLE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreValue {
    Bool(bool),
    Number(f64),
    Text(String),
    /// The record could not be scored; excluded from type uniformity.
    Error { error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreType {
    Boolean,
    Number,
    String,
}

impl fmt::Display for ScoreType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreType::Boolean => "boolean",
            ScoreType::Number => "number",
            ScoreType::String => "string",
        })
    }
}

impl ScoreValue {
    pub fn error(message: impl fmt::Display) -> Self {
        ScoreValue::Error {
            error: message.to_string(),
        }
    }

    pub fn score_type(&self) -> Option<ScoreType> {
        match self {
            ScoreValue::Bool(_) => Some(ScoreType::Boolean),
            ScoreValue::Number(_) => Some(ScoreType::Number),
            ScoreValue::Text(_) => Some(ScoreType::String),
            ScoreValue::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, ScoreValue::Error { .. })
    }

    /// Plain-text rendering used in exports.
    pub fn render(&self) -> String {
        match self {
            ScoreValue::Bool(b) => b.to_string(),
            ScoreValue::Number(n) => n.to_string(),
            ScoreValue::Text(s) => s.clone(),
            ScoreValue::Error { error } => format!("error: {error}"),
        }
    }
}

/// A score attached to one response by one evaluator node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: ScoreValue,
    pub evaluator_node: String,
    /// Set for boolean `false`, which the UI highlights as a failure.
    #[serde(default)]
    pub failed: bool,
}

impl Score {
    pub fn new(evaluator_node: impl Into<String>, value: ScoreValue) -> Self {
        Score {
            failed: value == ScoreValue::Bool(false),
            value,
            evaluator_node: evaluator_node.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator target `{0}` not found in response bindings")]
    UnresolvedTarget(String),
    #[error("invalid regex: {0}")]
    Regex(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("score type mismatch at response {record}: expected {expected}, found {found}")]
    MixedTypes {
        record: usize,
        expected: ScoreType,
        found: ScoreType,
    },
    #[error("scorer prompt must use the variable {{input}}")]
    MissingInput,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Execute(#[from] ExecuteError),
    #[error(transparent)]
    External(#[from] ExternalEvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Contains,
    StartsWith,
    EndsWith,
    Equals,
    MatchesRegex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Constant(String),
    Variable(String),
    Metavariable(String),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleEvalSpec {
    pub predicate: Predicate,
    pub target: Target,
    #[serde(default = "default_true")]
    pub case_sensitive: bool,
    #[serde(default)]
    pub negate: bool,
}

impl SimpleEvalSpec {
    pub fn new(predicate: Predicate, target: Target) -> Self {
        SimpleEvalSpec {
            predicate,
            target,
            case_sensitive: true,
            negate: false,
        }
    }

    /// Static checks: a constant regex target must compile.
    pub fn validate(&self) -> Result<(), EvalError> {
        if let (Predicate::MatchesRegex, Target::Constant(p)) = (self.predicate, &self.target) {
            self.regex(p)?;
        }
        Ok(())
    }

    fn regex(&self, pattern: &str) -> Result<regex::Regex, EvalError> {
        RegexBuilder::new(pattern)
            .case_insensitive(!self.case_sensitive)
            .build()
            .map_err(|e| EvalError::Regex(e.to_string()))
    }
}

/// Applies a built-in predicate to a response's text.
pub fn eval_simple(spec: &SimpleEvalSpec, record: &ResponseRecord) -> Result<bool, EvalError> {
    let target = match &spec.target {
        Target::Constant(s) => s.as_str(),
        Target::Variable(name) => record
            .fill_history
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| EvalError::UnresolvedTarget(name.clone()))?,
        Target::Metavariable(name) => record
            .resolve(name)
            .ok_or_else(|| EvalError::UnresolvedTarget(name.clone()))?,
    };
    let result = if spec.predicate == Predicate::MatchesRegex {
        spec.regex(target)?.is_match(record.text())
    } else {
        let (text, target) = if spec.case_sensitive {
            (record.text().to_string(), target.to_string())
        } else {
            (record.text().to_lowercase(), target.to_lowercase())
        };
        match spec.predicate {
            Predicate::Contains => text.contains(&target),
            Predicate::StartsWith => text.starts_with(&target),
            Predicate::EndsWith => text.ends_with(&target),
            Predicate::Equals => text == target,
            Predicate::MatchesRegex => unreachable!(),
        }
    };
    Ok(result != spec.negate)
}

/// The single score type of a run, ignoring error scores. The first typed
/// score fixes the type.
pub fn check_uniform(values: &[ScoreValue]) -> Result<Option<ScoreType>, EvalError> {
    let mut expected: Option<ScoreType> = None;
    for (i, v) in values.iter().enumerate() {
        let Some(t) = v.score_type() else { continue };
        match expected {
            None => expected = Some(t),
            Some(e) if e != t => {
                return Err(EvalError::MixedTypes {
                    record: i,
                    expected: e,
                    found: t,
                })
            }
            _ => {}
        }
    }
    Ok(expected)
}

#[cfg(test)]
pub(crate) fn test_record(text: &str) -> ResponseRecord {
    use crate::engine::{Outcome, QueryKey};
    use crate::planner::ModelSpec;
    use std::collections::BTreeMap;

    let model = ModelSpec::new("mock", "m").with_alias("M");
    ResponseRecord {
        key: QueryKey::compute(&model, &[], "p"),
        index: 0,
        outcome: Outcome::Text(text.to_string()),
        model,
        prompt: "p".into(),
        history: vec![],
        fill_history: BTreeMap::from([("command".into(), "Summarize".into())]),
        metadata: BTreeMap::from([("Ideal".into(), "4".into())]),
        timestamp_ms: 0,
        scores: BTreeMap::new(),
    }
}
