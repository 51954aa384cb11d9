use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use super::{EvalError, ScoreValue};
use crate::engine::{Dispatcher, ExecuteOptions, ProgressEvent, ResponseCache, ResponseRecord};
use crate::planner::{plan_prompt_node, ModelSpec, QueryPlan, VariableGroup};
use crate::provider::ProviderRegistry;
use crate::template::{parse_template, Template, TemplateValue};

pub const INPUT_VARIABLE: &str = "input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmScorerSpec {
    pub scorer_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer_model: Option<ModelSpec>,
}

impl LlmScorerSpec {
    pub fn template(&self) -> Result<Template, EvalError> {
        let t = parse_template(&self.scorer_prompt)?;
        if !t.variables().iter().any(|v| v == INPUT_VARIABLE) {
            return Err(EvalError::MissingInput);
        }
        Ok(t)
    }
}

/// Reads a scorer reply: `true`/`false` in any case, then a reply that is
/// entirely a number, otherwise the raw text.
pub fn parse_scorer_reply(reply: &str) -> ScoreValue {
    let trimmed = reply.trim();
    let bare = trimmed.strip_suffix('.').unwrap_or(trimmed);
    if bare.eq_ignore_ascii_case("true") {
        return ScoreValue::Bool(true);
    }
    if bare.eq_ignore_ascii_case("false") {
        return ScoreValue::Bool(false);
    }
    let mut tokens = trimmed.split_whitespace();
    if let (Some(first), None) = (tokens.next(), tokens.next()) {
        let first = first.strip_suffix('.').unwrap_or(first);
        if let Ok(n) = first.parse::<f64>() {
            if n.is_finite() {
                return ScoreValue::Number(n);
            }
        }
    }
    ScoreValue::Text(reply.to_string())
}

/// Builds the scorer queries for `records`. Returns the plan and, for each
/// record, the index of its plan entry (`None` for records without text).
pub fn plan_llm_score(
    node_id: &str,
    spec: &LlmScorerSpec,
    records: &[ResponseRecord],
    registry: &ProviderRegistry,
) -> Result<(QueryPlan, Vec<Option<usize>>), EvalError> {
    let template = spec.template()?;
    let model = match &spec.scorer_model {
        Some(m) => m.clone(),
        None => registry.default_scorer_model(),
    };
    let model = registry
        .canonicalize(&model)
        .map_err(|e| EvalError::Execute(e.into()))?;

    let variables = template.variables();
    let mut rows = Vec::new();
    let mut mapping = Vec::with_capacity(records.len());
    for r in records {
        if !r.is_success() {
            mapping.push(None);
            continue;
        }
        let mut context = r.metadata.clone();
        context.extend(r.fill_history.clone());
        let mut row = BTreeMap::new();
        for v in &variables {
            let value = if v == INPUT_VARIABLE {
                TemplateValue::literal(r.text()).with_metadata(context.clone())
            } else {
                let text = r
                    .resolve(v)
                    .ok_or_else(|| EvalError::UnresolvedTarget(v.clone()))?;
                TemplateValue::literal(text)
            };
            row.insert(v.clone(), value);
        }
        mapping.push(Some(rows.len()));
        rows.push(row);
    }
    let group = VariableGroup::joint("records", variables, rows);
    let plan = plan_prompt_node(node_id, &template, &[group], &[model], 1)?;
    Ok((plan, mapping))
}

/// Scores from whatever scorer replies the cache holds for `plan`, one per
/// record; `None` where no reply exists yet.
pub fn scores_from_cache(
    plan: &QueryPlan,
    mapping: &[Option<usize>],
    cache: &ResponseCache,
) -> Vec<Option<ScoreValue>> {
    mapping
        .iter()
        .map(|m| match m {
            None => Some(ScoreValue::error("response has no text to score")),
            Some(i) => cache.get(&plan.entries[*i].key, 0).map(|r| match r.error() {
                Some(e) => ScoreValue::error(e),
                None => parse_scorer_reply(r.text()),
            }),
        })
        .collect()
}

/// Scores each record by asking the scorer model, through the cache and
/// dispatcher. Provider failures become error scores.
pub async fn llm_score(
    node_id: &str,
    spec: &LlmScorerSpec,
    records: &[ResponseRecord],
    dispatcher: &Dispatcher,
    cache: &Arc<ResponseCache>,
    progress: Option<&mpsc::UnboundedSender<ProgressEvent>>,
) -> Result<Vec<ScoreValue>, EvalError> {
    let (plan, mapping) = plan_llm_score(node_id, spec, records, dispatcher.registry())?;
    dispatcher
        .execute(&plan, cache, ExecuteOptions::default(), progress)
        .await?;
    Ok(scores_from_cache(&plan, &mapping, cache)
        .into_iter()
        .map(|s| s.unwrap_or_else(|| ScoreValue::error("scorer produced no reply")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Clock, ManualClock};
    use crate::eval::test_record;
    use crate::provider::MockConfig;
    use serde_json::json;

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_scorer_reply("false"), ScoreValue::Bool(false));
        assert_eq!(parse_scorer_reply(" TRUE.\n"), ScoreValue::Bool(true));
        assert_eq!(parse_scorer_reply("42"), ScoreValue::Number(42.0));
        assert_eq!(parse_scorer_reply("0.85"), ScoreValue::Number(0.85));
        assert_eq!(
            parse_scorer_reply("0.85 S/cm"),
            ScoreValue::Text("0.85 S/cm".into())
        );
        assert_eq!(parse_scorer_reply("nan"), ScoreValue::Text("nan".into()));
    }

    #[test]
    fn prompt_needs_input() {
        let spec = LlmScorerSpec {
            scorer_prompt: "Rate {text}".into(),
            scorer_model: None,
        };
        assert!(matches!(spec.template(), Err(EvalError::MissingInput)));
    }

    fn dispatcher(canned: &[(&str, &str)]) -> Dispatcher {
        let config = MockConfig {
            canned: canned
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            ..Default::default()
        };
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new());
        Dispatcher::new(Arc::new(ProviderRegistry::with_mock(config)), clock)
    }

    #[tokio::test]
    async fn scores_with_canned_mock() {
        let d = dispatcher(&[
            ("Is this funny? LOL sure", "true"),
            ("Is this funny? meh", "False"),
            ("Is this funny? 42", "42"),
        ]);
        let cache = Arc::new(ResponseCache::in_memory());
        let spec = LlmScorerSpec {
            scorer_prompt: "Is this funny? {input}".into(),
            scorer_model: None,
        };
        let mut failed = test_record("");
        failed.outcome = crate::engine::Outcome::Error(crate::provider::ProviderError::new(
            crate::provider::ErrorKind::Network,
            "x",
        ));
        let records = [test_record("LOL sure"), test_record("meh"), failed, test_record("42")];
        let scores = llm_score("s", &spec, &records, &d, &cache, None).await.unwrap();
        assert_eq!(scores[0], ScoreValue::Bool(true));
        assert_eq!(scores[1], ScoreValue::Bool(false));
        assert!(scores[2].is_error());
        assert_eq!(scores[3], ScoreValue::Number(42.0));

        // Reproducible and cached.
        let again = llm_score("s", &spec, &records, &d, &cache, None).await.unwrap();
        assert_eq!(again, scores);
    }

    #[tokio::test]
    async fn metavariables_reach_the_scorer() {
        let d = dispatcher(&[("expected 4 got four", "true")]);
        let cache = Arc::new(ResponseCache::in_memory());
        let spec = LlmScorerSpec {
            scorer_prompt: "expected {#Ideal} got {input}".into(),
            scorer_model: Some(ModelSpec::new("mock", "judge").with_setting("temperature", json!(0))),
        };
        let scores = llm_score("s", &spec, &[test_record("four")], &d, &cache, None)
            .await
            .unwrap();
        assert_eq!(scores, vec![ScoreValue::Bool(true)]);
    }
}
