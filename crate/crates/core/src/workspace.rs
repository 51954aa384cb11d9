//! Flow execution: resolves a node's upstream closure in topological order,
//! planning and dispatching query nodes and scoring evaluator nodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc::UnboundedSender;

use crate::analysis::{self, AnalysisError, VisSeries};
use crate::engine::{
    records_for_plan, BatchSummary, CacheError, Dispatcher, ExecuteError, ExecuteOptions,
    ProgressEvent, QueryKey, ResponseCache, ResponseRecord,
};
use crate::eval::{
    check_uniform, eval_score_expr, eval_simple, external_eval, parse_score_expr, plan_llm_score,
    scores_from_cache, EvalError, ExternalScorer, Score, ScoreValue,
};
use crate::flow::{
    save_flow, upstream_closure, validate_flow, FlowDocument, FlowError, Issue, Node, NodeKind,
    NodePayload, ValidationReport, CONVERSATION_HANDLE, RESPONSES_HANDLE,
};
use crate::planner::{
    count_preview, plan_chat_turn, plan_prompt_node, ChatHistory, ChatMessage, CountPreview,
    ModelSpec, QueryPlan, VariableGroup,
};
use crate::template::{expand_fields, parse_template, TemplateValue};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("flow has errors: {}", .0.errors.iter().map(render_issue).collect::<Vec<_>>().join("; "))]
    Invalid(ValidationReport),
    #[error("node `{node}`: {message}")]
    Node { node: String, message: String },
    #[error("evaluator `{node}`: {source}")]
    Eval {
        node: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Execute(#[from] ExecuteError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("node `{0}` does not produce responses")]
    NoResponses(String),
    #[error("node `{0}` cannot be run; choose a Prompt, Chat Turn or evaluator node")]
    NotRunnable(String),
}

fn render_issue(i: &Issue) -> String {
    match &i.node {
        Some(n) => format!("{n}: {}", i.message),
        None => i.message.clone(),
    }
}

fn node_error(node: &str, e: impl std::fmt::Display) -> WorkspaceError {
    WorkspaceError::Node {
        node: node.to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRequest {
    pub node_id: String,
    #[serde(default)]
    pub force: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_override: Option<u32>,
}

impl RunRequest {
    pub fn new(node_id: impl Into<String>) -> Self {
        RunRequest {
            node_id: node_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCount {
    pub node_id: String,
    pub total: usize,
    pub pending: usize,
}

/// Query counts for running a node, summed over every query-issuing node in
/// its upstream closure.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReport {
    pub total: usize,
    pub pending: usize,
    pub nodes: Vec<NodeCount>,
    pub warnings: Vec<Issue>,
}

impl PlanReport {
    pub fn preview(&self) -> CountPreview {
        CountPreview {
            total: self.total,
            pending: self.pending,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCounts {
    pub ok: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub node_id: String,
    pub dispatched: BatchSummary,
    /// Outcome counts of the target node's records, by model alias.
    pub per_model: BTreeMap<String, ModelCounts>,
    pub records: usize,
    pub warnings: Vec<Issue>,
}

impl RunReport {
    pub fn has_errors(&self) -> bool {
        self.dispatched.failed > 0 || self.per_model.values().any(|c| c.errors > 0)
    }
}

#[derive(Debug, Clone)]
enum Output {
    Values(Vec<TemplateValue>),
    Table(Vec<BTreeMap<String, String>>),
    Responses(Vec<ResponseRecord>),
    Nothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Count queries; read only the cache.
    Plan,
    /// Resolve outputs from the cache and stored scores only.
    CacheOnly,
    /// Dispatch missing queries and run evaluators.
    Run,
}

fn record_identity(r: &ResponseRecord) -> String {
    format!(
        "{}:{}:{}",
        r.key,
        r.index,
        serde_json::to_string(&(&r.fill_history, &r.metadata)).unwrap_or_default()
    )
}

/// Engine state for one flow: its cache, stored external scores and the
/// shared dispatcher.
#[derive(Clone)]
pub struct Workspace {
    dispatcher: Arc<Dispatcher>,
    cache: Arc<ResponseCache>,
    external_scores: Arc<Mutex<HashMap<String, HashMap<String, ScoreValue>>>>,
    eval_command: Option<String>,
}

impl Workspace {
    pub fn new(dispatcher: Arc<Dispatcher>, cache: Arc<ResponseCache>) -> Self {
        Workspace {
            dispatcher,
            cache,
            external_scores: Arc::default(),
            eval_command: None,
        }
    }

    /// Command used by External Evaluator nodes that name none.
    pub fn with_eval_command(mut self, command: Option<String>) -> Self {
        self.eval_command = command;
        self
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }

    pub fn dispatcher(&self) -> &Arc<Dispatcher> {
        &self.dispatcher
    }

    /// Adds the records a shared flow carries to this cache.
    pub fn import_embedded(&self, doc: &FlowDocument) -> Result<usize, CacheError> {
        match &doc.cache {
            Some(c) => self.cache.import(c.values().flatten().cloned()),
            None => Ok(0),
        }
    }

    pub async fn plan(&self, doc: &FlowDocument, request: &RunRequest) -> Result<PlanReport, WorkspaceError> {
        let mut r = Resolver::new(self, doc, Mode::Plan, request, None);
        r.resolve_closure(&request.node_id).await?;
        Ok(r.counts)
    }

    /// Runs `request.node_id` and everything upstream of it.
    pub async fn run(
        &self,
        doc: &FlowDocument,
        request: &RunRequest,
        progress: Option<&UnboundedSender<ProgressEvent>>,
    ) -> Result<RunReport, WorkspaceError> {
        let report = validate_flow(doc);
        if !report.is_ok() {
            return Err(WorkspaceError::Invalid(report));
        }
        let node = doc
            .node(&request.node_id)
            .ok_or_else(|| FlowError::NoSuchNode(request.node_id.clone()))?;
        if !(node.kind.is_query() || node.kind.is_evaluator()) {
            return Err(WorkspaceError::NotRunnable(node.id.clone()));
        }
        let mut r = Resolver::new(self, doc, Mode::Run, request, progress);
        r.resolve_closure(&request.node_id).await?;
        self.cache.flush()?;
        let records = r.responses_of(&request.node_id)?;
        let mut per_model: BTreeMap<String, ModelCounts> = BTreeMap::new();
        for rec in &records {
            let c = per_model.entry(rec.model_alias().to_string()).or_default();
            if rec.is_success() {
                c.ok += 1;
            } else {
                c.errors += 1;
            }
        }
        let mut warnings = report.warnings;
        warnings.extend(r.counts.warnings);
        Ok(RunReport {
            node_id: request.node_id.clone(),
            dispatched: r.dispatched,
            per_model,
            records: records.len(),
            warnings,
        })
    }

    /// The records a node currently holds, from the cache only, in plan order.
    pub async fn responses(&self, doc: &FlowDocument, node_id: &str) -> Result<Vec<ResponseRecord>, WorkspaceError> {
        let request = RunRequest::new(node_id);
        let mut r = Resolver::new(self, doc, Mode::CacheOnly, &request, None);
        r.resolve_closure(node_id).await?;
        r.responses_of(node_id)
    }

    /// Plot series for a Vis node, or for an evaluator node directly.
    pub async fn vis(
        &self,
        doc: &FlowDocument,
        node_id: &str,
        y_variable: Option<&str>,
    ) -> Result<VisSeries, WorkspaceError> {
        let node = doc
            .node(node_id)
            .ok_or_else(|| FlowError::NoSuchNode(node_id.to_string()))?;
        let (evaluator, y) = match node.payload()? {
            NodePayload::Vis(v) => {
                let source = doc
                    .incoming(node_id)
                    .find(|e| e.target_handle == RESPONSES_HANDLE)
                    .ok_or_else(|| node_error(node_id, "no evaluator connected"))?;
                let y = y_variable.map(str::to_string).or(v.y_variable);
                (source.source.clone(), y)
            }
            _ if node.kind.is_evaluator() => (node_id.to_string(), y_variable.map(str::to_string)),
            _ => return Err(node_error(node_id, "not a Vis or evaluator node")),
        };
        let records = self.responses(doc, &evaluator).await?;
        Ok(analysis::vis_series(&records, &evaluator, y.as_deref())?)
    }

    pub async fn export_csv(&self, doc: &FlowDocument, node_id: &str) -> Result<Vec<u8>, WorkspaceError> {
        let records = self.responses(doc, node_id).await?;
        Ok(analysis::export_csv(&records, true))
    }

    /// The flow document with every cached record its nodes use embedded.
    pub async fn bundle(&self, doc: &FlowDocument) -> Result<Vec<u8>, WorkspaceError> {
        let mut keys = BTreeSet::new();
        for sink in sinks(doc) {
            let request = RunRequest::new(&sink);
            let mut r = Resolver::new(self, doc, Mode::CacheOnly, &request, None);
            r.resolve_closure(&sink).await?;
            keys.extend(r.touched);
        }
        let mut embedded = BTreeMap::new();
        for k in keys {
            let recs = self.cache.records(&k);
            if !recs.is_empty() {
                embedded.insert(k.to_hex(), recs);
            }
        }
        let mut out = doc.clone();
        out.cache = Some(embedded);
        Ok(save_flow(&out, true))
    }
}

/// Nodes nothing else consumes, skipping inputs and comments.
fn sinks(doc: &FlowDocument) -> Vec<String> {
    doc.nodes
        .iter()
        .filter(|n| !n.kind.is_input() && n.kind != NodeKind::Comment)
        .filter(|n| doc.outgoing(&n.id).next().is_none())
        .map(|n| n.id.clone())
        .collect()
}

/// The response-producing node an export should default to when there is
/// exactly one candidate sink.
pub fn default_export_node(doc: &FlowDocument) -> Option<String> {
    let candidates: Vec<String> = doc
        .nodes
        .iter()
        .filter(|n| n.kind.yields_responses())
        .filter(|n| {
            !doc.outgoing(&n.id).any(|e| {
                doc.node(&e.target)
                    .is_some_and(|t| t.kind.yields_responses())
            })
        })
        .map(|n| n.id.clone())
        .collect();
    match candidates.as_slice() {
        [only] => Some(only.clone()),
        _ => None,
    }
}

struct Resolver<'a> {
    ws: &'a Workspace,
    doc: &'a FlowDocument,
    mode: Mode,
    request: &'a RunRequest,
    progress: Option<&'a UnboundedSender<ProgressEvent>>,
    outputs: HashMap<String, Output>,
    counts: PlanReport,
    dispatched: BatchSummary,
    touched: BTreeSet<QueryKey>,
}

impl<'a> Resolver<'a> {
    fn new(
        ws: &'a Workspace,
        doc: &'a FlowDocument,
        mode: Mode,
        request: &'a RunRequest,
        progress: Option<&'a UnboundedSender<ProgressEvent>>,
    ) -> Self {
        Resolver {
            ws,
            doc,
            mode,
            request,
            progress,
            outputs: HashMap::new(),
            counts: PlanReport::default(),
            dispatched: BatchSummary::default(),
            touched: BTreeSet::new(),
        }
    }

    async fn resolve_closure(&mut self, target: &str) -> Result<(), WorkspaceError> {
        for id in upstream_closure(self.doc, target)? {
            let node = self.doc.node(&id).expect("closure member");
            let out = self.resolve(node).await?;
            self.outputs.insert(id, out);
        }
        Ok(())
    }

    fn warn(&mut self, node: &str, message: impl Into<String>) {
        self.counts.warnings.push(Issue {
            node: Some(node.to_string()),
            message: message.into(),
        });
    }

    fn responses_of(&self, node_id: &str) -> Result<Vec<ResponseRecord>, WorkspaceError> {
        match self.outputs.get(node_id) {
            Some(Output::Responses(r)) => Ok(r.clone()),
            _ => Err(WorkspaceError::NoResponses(node_id.to_string())),
        }
    }

    /// Records arriving on `handle`, or none if nothing is connected.
    fn input_records(&self, node_id: &str, handle: &str) -> Vec<ResponseRecord> {
        self.doc
            .incoming(node_id)
            .filter(|e| e.target_handle == handle)
            .filter_map(|e| match self.outputs.get(&e.source) {
                Some(Output::Responses(r)) => Some(r.clone()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    async fn resolve(&mut self, node: &Node) -> Result<Output, WorkspaceError> {
        let id = node.id.as_str();
        Ok(match node.payload()? {
            NodePayload::Comment(_) => Output::Nothing,
            NodePayload::Csv(c) => Output::Values(c.values().into_iter().map(TemplateValue::literal).collect()),
            NodePayload::TabularData(t) => Output::Table(t.rows),
            NodePayload::TextFields(t) => {
                let (groups, missing) = self.groups_for(node)?;
                let mut fields = Vec::new();
                for f in t.fields.into_iter().filter(|f| f.enabled) {
                    let template = parse_template(&f.text).map_err(|e| node_error(id, e))?;
                    let uncovered: Vec<String> = template
                        .variables()
                        .into_iter()
                        .filter(|v| missing.contains(v))
                        .collect();
                    if uncovered.is_empty() {
                        fields.push(f.text);
                    } else {
                        self.warn(id, format!("field skipped: unconnected variable {}", uncovered.join(", ")));
                    }
                }
                Output::Values(expand_fields(&fields, &groups).map_err(|e| node_error(id, e))?)
            }
            NodePayload::Prompt(p) => {
                let template = parse_template(&p.template).map_err(|e| node_error(id, e))?;
                let n = self.n_for(id, p.n);
                let (groups, missing) = self.groups_for(node)?;
                let models = self.canonical_models(&p.models)?;
                let plan = if !missing.is_empty() {
                    self.warn(id, format!("unconnected variable {}", missing.join(", ")));
                    QueryPlan::empty(id, n)
                } else {
                    plan_prompt_node(id, &template, &groups, &models, n).map_err(|e| node_error(id, e))?
                };
                Output::Responses(self.run_plan(&plan).await?)
            }
            NodePayload::ChatTurn(c) => {
                let template = parse_template(&c.template).map_err(|e| node_error(id, e))?;
                let n = self.n_for(id, c.n);
                let (groups, missing) = self.groups_for(node)?;
                let histories: Vec<ChatHistory> = self
                    .input_records(id, CONVERSATION_HANDLE)
                    .into_iter()
                    .filter(|r| r.is_success())
                    .map(|r| {
                        let mut turns = r.history.clone();
                        turns.push(ChatMessage::user(r.prompt.clone()));
                        turns.push(ChatMessage::assistant(r.text()));
                        ChatHistory {
                            turns,
                            origin: r.key,
                            origin_model: r.model,
                            fill_history: r.fill_history,
                            metadata: r.metadata,
                        }
                    })
                    .collect();
                let overrides = match &c.models {
                    Some(ms) => Some(self.canonical_models(ms)?),
                    None => None,
                };
                let plan = if !missing.is_empty() {
                    self.warn(id, format!("unconnected variable {}", missing.join(", ")));
                    QueryPlan::empty(id, n)
                } else if histories.is_empty() {
                    self.warn(id, "no conversations to continue");
                    QueryPlan::empty(id, n)
                } else {
                    plan_chat_turn(id, &template, &histories, &groups, overrides.as_deref(), n)
                        .map_err(|e| node_error(id, e))?
                };
                Output::Responses(self.run_plan(&plan).await?)
            }
            NodePayload::SimpleEvaluator(spec) => {
                let records = self.input_records(id, RESPONSES_HANDLE);
                let values = records
                    .iter()
                    .map(|r| match r.is_success() {
                        false => ScoreValue::error("response has no text to score"),
                        true => eval_simple(&spec, r).map(ScoreValue::Bool).unwrap_or_else(ScoreValue::error),
                    })
                    .collect();
                Output::Responses(attach(id, records, values)?)
            }
            NodePayload::ExpressionEvaluator(e) => {
                let expr = parse_score_expr(&e.expression).map_err(|e| eval_error(id, e.into()))?;
                let records = self.input_records(id, RESPONSES_HANDLE);
                let values = records
                    .iter()
                    .map(|r| match r.is_success() {
                        false => ScoreValue::error("response has no text to score"),
                        true => eval_score_expr(&expr, r).unwrap_or_else(ScoreValue::error),
                    })
                    .collect();
                Output::Responses(attach(id, records, values)?)
            }
            NodePayload::LlmScorer(spec) => {
                let records = self.input_records(id, RESPONSES_HANDLE);
                let (plan, mapping) = plan_llm_score(id, &spec, &records, self.ws.dispatcher.registry())
                    .map_err(|e| eval_error(id, e))?;
                self.run_plan(&plan).await?;
                let scores = scores_from_cache(&plan, &mapping, &self.ws.cache);
                Output::Responses(attach_some(id, records, scores)?)
            }
            NodePayload::ExternalEvaluator(x) => {
                let records = self.input_records(id, RESPONSES_HANDLE);
                if self.mode == Mode::Run {
                    let command = x
                        .command
                        .or_else(|| self.ws.eval_command.clone())
                        .ok_or_else(|| node_error(id, "no scorer command configured"))?;
                    let mut scorer = ExternalScorer::new(command);
                    if let Some(secs) = x.timeout_secs {
                        scorer.timeout = Duration::from_secs(secs);
                    }
                    let (values, failure) = match external_eval(&scorer, &records).await {
                        Ok(v) => (v, None),
                        Err(mut e) => (std::mem::take(&mut e.partial), Some(e)),
                    };
                    let mut store = self.ws.external_scores.lock();
                    let stored = store.entry(id.to_string()).or_default();
                    stored.clear();
                    for (r, v) in records.iter().zip(&values) {
                        stored.insert(record_identity(r), v.clone());
                    }
                    drop(store);
                    if let Some(e) = failure {
                        return Err(eval_error(id, EvalError::External(e)));
                    }
                }
                let scores = {
                    let store = self.ws.external_scores.lock();
                    let stored = store.get(id);
                    records
                        .iter()
                        .map(|r| stored.and_then(|s| s.get(&record_identity(r)).cloned()))
                        .collect()
                };
                Output::Responses(attach_some(id, records, scores)?)
            }
            NodePayload::Inspect(_) | NodePayload::Vis(_) => {
                Output::Responses(self.input_records(id, RESPONSES_HANDLE))
            }
        })
    }

    fn n_for(&self, node_id: &str, n: u32) -> u32 {
        match self.request.n_override {
            Some(o) if node_id == self.request.node_id => o,
            _ => n,
        }
    }

    fn canonical_models(&self, models: &[ModelSpec]) -> Result<Vec<ModelSpec>, WorkspaceError> {
        let registry = self.ws.dispatcher.registry();
        models
            .iter()
            .map(|m| registry.canonicalize(m).map_err(|e| WorkspaceError::Execute(e.into())))
            .collect()
    }

    /// Variable groups feeding a templated node, and the template variables
    /// no edge covers.
    fn groups_for(&mut self, node: &Node) -> Result<(Vec<VariableGroup>, Vec<String>), WorkspaceError> {
        let doc = self.doc;
        let variables = node.template_variables();
        let mut groups = Vec::new();
        let mut tables: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        let mut covered = BTreeSet::new();
        for e in doc.incoming(&node.id) {
            if !variables.contains(&e.target_handle) {
                continue;
            }
            covered.insert(e.target_handle.clone());
            match self.outputs.get(&e.source) {
                Some(Output::Values(vs)) => groups.push(VariableGroup::single(
                    format!("{}.{}", e.source, e.source_handle),
                    e.target_handle.clone(),
                    vs.clone(),
                )),
                Some(Output::Table(_)) => tables
                    .entry(e.source.as_str())
                    .or_default()
                    .push((e.target_handle.as_str(), e.source_handle.as_str())),
                Some(Output::Responses(rs)) => groups.push(VariableGroup::single(
                    format!("{}.{}", e.source, e.source_handle),
                    e.target_handle.clone(),
                    rs.iter()
                        .filter(|r| r.is_success())
                        .map(|r| TemplateValue {
                            text: r.text().to_string(),
                            fill_history: r.fill_history.clone(),
                            metadata: r.metadata.clone(),
                            ..Default::default()
                        })
                        .collect(),
                )),
                _ => groups.push(VariableGroup::single(e.source.clone(), e.target_handle.clone(), Vec::new())),
            }
        }
        for (source, bindings) in tables {
            let Some(Output::Table(rows)) = self.outputs.get(source) else { continue };
            let vars = bindings.iter().map(|(v, _)| v.to_string()).collect();
            let rows = rows
                .iter()
                .map(|row| {
                    bindings
                        .iter()
                        .map(|(var, col)| {
                            let cell = row.get(*col).cloned().unwrap_or_default();
                            (var.to_string(), TemplateValue::literal(cell).with_metadata(row.clone()))
                        })
                        .collect()
                })
                .collect();
            groups.push(VariableGroup::joint(source, vars, rows));
        }
        for g in &groups {
            if g.rows.is_empty() {
                self.warn(&node.id, format!("empty input for {}", g.variables.join(", ")));
            }
        }
        let missing = variables.into_iter().filter(|v| !covered.contains(v)).collect();
        Ok((groups, missing))
    }

    /// Counts a plan and, when running, dispatches its delta. Returns the
    /// cached records for the plan in plan order.
    async fn run_plan(&mut self, plan: &QueryPlan) -> Result<Vec<ResponseRecord>, WorkspaceError> {
        let force = self.request.force && plan.node_id == self.request.node_id;
        self.touched.extend(plan.entries.iter().map(|e| e.key));
        let preview = if force {
            CountPreview {
                total: plan.len(),
                pending: self
                    .ws
                    .dispatcher
                    .pending(plan, &self.ws.cache, ExecuteOptions { force })
                    .len(),
            }
        } else {
            count_preview(plan, &self.ws.cache)
        };
        self.counts.total += preview.total;
        self.counts.pending += preview.pending;
        self.counts.nodes.push(NodeCount {
            node_id: plan.node_id.clone(),
            total: preview.total,
            pending: preview.pending,
        });
        if self.mode == Mode::Run {
            let s = self
                .ws
                .dispatcher
                .execute(plan, &self.ws.cache, ExecuteOptions { force }, self.progress)
                .await?;
            self.dispatched.succeeded += s.succeeded;
            self.dispatched.failed += s.failed;
            self.dispatched.skipped += s.skipped;
        }
        Ok(records_for_plan(plan, &self.ws.cache))
    }
}

fn eval_error(node: &str, source: EvalError) -> WorkspaceError {
    WorkspaceError::Eval {
        node: node.to_string(),
        source,
    }
}

fn attach(node: &str, records: Vec<ResponseRecord>, values: Vec<ScoreValue>) -> Result<Vec<ResponseRecord>, WorkspaceError> {
    attach_some(node, records, values.into_iter().map(Some).collect())
}

/// Attaches one evaluator's scores, rejecting a run whose scores mix types.
fn attach_some(
    node: &str,
    mut records: Vec<ResponseRecord>,
    values: Vec<Option<ScoreValue>>,
) -> Result<Vec<ResponseRecord>, WorkspaceError> {
    let present: Vec<ScoreValue> = values.iter().flatten().cloned().collect();
    if let Err(e) = check_uniform(&present) {
        let e = match e {
            EvalError::MixedTypes { record, expected, found } => {
                let position = values
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_some())
                    .nth(record)
                    .map_or(record, |(i, _)| i);
                EvalError::MixedTypes {
                    record: position,
                    expected,
                    found,
                }
            }
            other => other,
        };
        return Err(eval_error(node, e));
    }
    for (r, v) in records.iter_mut().zip(values) {
        if let Some(v) = v {
            r.scores.insert(node.to_string(), Score::new(node, v));
        }
    }
    Ok(records)
}
