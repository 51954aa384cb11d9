//! Query planning: how many requests a Prompt or Chat Turn node implies and
//! exactly which ones.
//!
//! A plan is the product `prompts × models × N × max(1, histories)`. Prompts
//! come from the cross product of variable groups, except that a tabular
//! source binds all of its columns jointly, one row at a time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::engine::{QueryKey, ResponseCache};
use crate::template::{fill, Bindings, Template, TemplateError, TemplateValue};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("chat turn `{0}` has no conversation histories to continue")]
    EmptyHistory(String),
    #[error("responses per prompt must be at least 1, got {0}")]
    InvalidN(u32),
}

/// Values that fill one or more variables together.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableGroup {
    pub group_id: String,
    pub variables: Vec<String>,
    pub rows: Vec<BTreeMap<String, TemplateValue>>,
}

impl VariableGroup {
    pub fn single(group_id: impl Into<String>, variable: impl Into<String>, values: Vec<TemplateValue>) -> Self {
        let variable = variable.into();
        VariableGroup {
            group_id: group_id.into(),
            rows: values
                .into_iter()
                .map(|v| BTreeMap::from([(variable.clone(), v)]))
                .collect(),
            variables: vec![variable],
        }
    }

    /// A group whose rows bind `variables` jointly ("carry together").
    pub fn joint(
        group_id: impl Into<String>,
        variables: Vec<String>,
        rows: Vec<BTreeMap<String, TemplateValue>>,
    ) -> Self {
        VariableGroup {
            group_id: group_id.into(),
            variables,
            rows,
        }
    }
}

/// Cross product across groups; rows within a group bind jointly.
///
/// Groups are ordered by the first template position of any of their
/// variables, and the last group varies fastest. Groups that cover none of
/// the template's variables do not contribute.
pub fn permute_bindings(
    template: &Template,
    groups: &[VariableGroup],
) -> Result<Vec<Bindings>, TemplateError> {
    let vars = template.variables();
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (gi, group) in groups.iter().enumerate() {
        for v in &group.variables {
            if !vars.contains(v) {
                continue;
            }
            if owner.insert(v.as_str(), gi).is_some() {
                return Err(TemplateError::DuplicateCoverage(v.clone()));
            }
        }
    }

    let mut order: Vec<usize> = Vec::new();
    for v in &vars {
        let gi = *owner
            .get(v.as_str())
            .ok_or_else(|| TemplateError::UncoveredVariable(v.clone()))?;
        if !order.contains(&gi) {
            order.push(gi);
        }
    }

    let mut out: Vec<Bindings> = vec![Bindings::new()];
    for gi in order {
        let group = &groups[gi];
        let mut next = Vec::with_capacity(out.len() * group.rows.len());
        for partial in &out {
            for row in &group.rows {
                let mut b = partial.clone();
                for v in &group.variables {
                    if !vars.contains(v) {
                        continue;
                    }
                    if let Some(value) = row.get(v) {
                        b.insert(v.clone(), value.clone());
                    }
                }
                next.push(b);
            }
        }
        out = next;
    }
    Ok(out)
}

/// A provider model at particular settings. The identity is
/// `(provider, model, settings)`; the alias is only for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub settings: Map<String, Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub alias: String,
}

impl ModelSpec {
    pub fn new(provider: impl Into<String>, model: impl Into<String>) -> Self {
        ModelSpec {
            provider: provider.into(),
            model: model.into(),
            settings: Map::new(),
            alias: String::new(),
        }
    }

    pub fn with_alias(mut self, alias: impl Into<String>) -> Self {
        self.alias = alias.into();
        self
    }

    pub fn with_setting(mut self, key: &str, value: Value) -> Self {
        self.settings.insert(key.to_string(), value);
        self
    }

    pub fn display_name(&self) -> &str {
        if self.alias.is_empty() {
            &self.model
        } else {
            &self.alias
        }
    }

    pub fn same_identity(&self, other: &ModelSpec) -> bool {
        self.provider == other.provider && self.model == other.model && self.settings == other.settings
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A finished conversation that a Chat Turn can continue.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatHistory {
    pub turns: Vec<ChatMessage>,
    pub origin: QueryKey,
    pub origin_model: ModelSpec,
    pub fill_history: BTreeMap<String, String>,
    pub metadata: BTreeMap<String, String>,
}

impl ChatHistory {
    /// Roles alternate user/assistant after an optional leading system turn.
    pub fn is_well_formed(&self) -> bool {
        let body = match self.turns.first() {
            Some(m) if m.role == Role::System => &self.turns[1..],
            _ => &self.turns[..],
        };
        body.iter().enumerate().all(|(i, m)| {
            m.role
                == if i % 2 == 0 {
                    Role::User
                } else {
                    Role::Assistant
                }
        })
    }
}

/// One distinct (prompt, model, history) combination; it expands into `N`
/// queries with generation indices `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub key: QueryKey,
    pub prompt: usize,
    pub model: ModelSpec,
    pub history: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub node_id: String,
    pub prompts: Vec<TemplateValue>,
    pub models: Vec<ModelSpec>,
    pub n_per_prompt: u32,
    pub chat_histories: Vec<ChatHistory>,
    pub models_overridden: bool,
    pub entries: Vec<PlanEntry>,
}

impl QueryPlan {
    pub fn empty(node_id: impl Into<String>, n: u32) -> Self {
        QueryPlan {
            node_id: node_id.into(),
            prompts: Vec::new(),
            models: Vec::new(),
            n_per_prompt: n.max(1),
            chat_histories: Vec::new(),
            models_overridden: false,
            entries: Vec::new(),
        }
    }

    /// Number of queries: entries × N.
    pub fn len(&self) -> usize {
        self.entries.len() * self.n_per_prompt as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The closed-form count `P × M × N × max(1, C)`, where `M` is 1 for
    /// chat turns that continue on each history's own model.
    pub fn closed_form_count(&self) -> usize {
        let models = if self.chat_histories.is_empty() || self.models_overridden {
            self.models.len()
        } else {
            1
        };
        self.prompts.len() * models * self.n_per_prompt as usize * self.chat_histories.len().max(1)
    }

    /// All `(entry, generation index)` pairs in plan order.
    pub fn queries(&self) -> impl Iterator<Item = (&PlanEntry, u32)> + '_ {
        self.entries
            .iter()
            .flat_map(move |e| (0..self.n_per_prompt).map(move |i| (e, i)))
    }

    /// Full message list for an entry, excluding any system message.
    pub fn messages(&self, entry: &PlanEntry) -> Vec<ChatMessage> {
        let mut msgs = match entry.history {
            Some(h) => self.chat_histories[h].turns.clone(),
            None => Vec::new(),
        };
        msgs.push(ChatMessage::user(self.prompts[entry.prompt].text.clone()));
        msgs
    }

    /// Fill history and metadata that travel with this entry's responses.
    pub fn bindings_for(&self, entry: &PlanEntry) -> (BTreeMap<String, String>, BTreeMap<String, String>) {
        let prompt = &self.prompts[entry.prompt];
        match entry.history {
            None => (prompt.fill_history.clone(), prompt.metadata.clone()),
            Some(h) => {
                let origin = &self.chat_histories[h];
                let mut history = origin.fill_history.clone();
                history.extend(prompt.fill_history.clone());
                let mut metadata = origin.metadata.clone();
                metadata.extend(prompt.metadata.clone());
                (history, metadata)
            }
        }
    }
}

fn check_n(n: u32) -> Result<(), PlanError> {
    if n == 0 {
        Err(PlanError::InvalidN(n))
    } else {
        Ok(())
    }
}

fn fill_all(template: &Template, groups: &[VariableGroup]) -> Result<Vec<TemplateValue>, PlanError> {
    permute_bindings(template, groups)?
        .iter()
        .map(|b| fill(template, b).map_err(PlanError::from))
        .collect()
}

/// Plans a Prompt node. Queries are enumerated prompt-major, then model,
/// then generation index.
pub fn plan_prompt_node(
    node_id: &str,
    template: &Template,
    groups: &[VariableGroup],
    models: &[ModelSpec],
    n: u32,
) -> Result<QueryPlan, PlanError> {
    check_n(n)?;
    let prompts = fill_all(template, groups)?;
    let mut entries = Vec::with_capacity(prompts.len() * models.len());
    for (pi, prompt) in prompts.iter().enumerate() {
        for model in models {
            entries.push(PlanEntry {
                key: QueryKey::compute(model, &[], &prompt.text),
                prompt: pi,
                model: model.clone(),
                history: None,
            });
        }
    }
    Ok(QueryPlan {
        node_id: node_id.to_string(),
        prompts,
        models: models.to_vec(),
        n_per_prompt: n,
        chat_histories: Vec::new(),
        models_overridden: false,
        entries,
    })
}

/// Plans a Chat Turn node. Without an override every history continues on
/// its origin model; with one, every history is continued by every override
/// model.
pub fn plan_chat_turn(
    node_id: &str,
    template: &Template,
    histories: &[ChatHistory],
    groups: &[VariableGroup],
    models_override: Option<&[ModelSpec]>,
    n: u32,
) -> Result<QueryPlan, PlanError> {
    check_n(n)?;
    if histories.is_empty() {
        return Err(PlanError::EmptyHistory(node_id.to_string()));
    }
    let prompts = fill_all(template, groups)?;
    let mut entries = Vec::new();
    for (hi, history) in histories.iter().enumerate() {
        for (pi, prompt) in prompts.iter().enumerate() {
            let models: Vec<&ModelSpec> = match models_override {
                Some(ms) => ms.iter().collect(),
                None => vec![&history.origin_model],
            };
            for model in models {
                entries.push(PlanEntry {
                    key: QueryKey::compute(model, &history.turns, &prompt.text),
                    prompt: pi,
                    model: model.clone(),
                    history: Some(hi),
                });
            }
        }
    }
    Ok(QueryPlan {
        node_id: node_id.to_string(),
        prompts,
        models: models_override.map(<[ModelSpec]>::to_vec).unwrap_or_default(),
        n_per_prompt: n,
        chat_histories: histories.to_vec(),
        models_overridden: models_override.is_some(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPreview {
    pub total: usize,
    pub pending: usize,
}

/// Total queries and how many the cache cannot already answer. Dispatches
/// nothing.
pub fn count_preview(plan: &QueryPlan, cache: &ResponseCache) -> CountPreview {
    CountPreview {
        total: plan.len(),
        pending: crate::engine::delta_size(&crate::engine::compute_delta(plan, cache)),
    }
}
