//! Flow documents: nodes, edges, per-kind payloads, validation and the
//! canonical file format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::engine::ResponseRecord;
use crate::eval::{parse_score_expr, LlmScorerSpec, SimpleEvalSpec};
use crate::planner::ModelSpec;
use crate::template::parse_template;

pub const FLOW_VERSION: &str = "1";
pub const OUTPUT_HANDLE: &str = "output";
pub const RESPONSES_HANDLE: &str = "responses";
pub const CONVERSATION_HANDLE: &str = "conversation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    TextFields,
    #[serde(rename = "CSV")]
    Csv,
    TabularData,
    Prompt,
    ChatTurn,
    SimpleEvaluator,
    ExpressionEvaluator,
    #[serde(rename = "LLMScorer")]
    LlmScorer,
    ExternalEvaluator,
    Vis,
    Inspect,
    Comment,
}

impl NodeKind {
    pub const ALL: [NodeKind; 12] = [
        NodeKind::TextFields,
        NodeKind::Csv,
        NodeKind::TabularData,
        NodeKind::Prompt,
        NodeKind::ChatTurn,
        NodeKind::SimpleEvaluator,
        NodeKind::ExpressionEvaluator,
        NodeKind::LlmScorer,
        NodeKind::ExternalEvaluator,
        NodeKind::Vis,
        NodeKind::Inspect,
        NodeKind::Comment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::TextFields => "TextFields",
            NodeKind::Csv => "CSV",
            NodeKind::TabularData => "TabularData",
            NodeKind::Prompt => "Prompt",
            NodeKind::ChatTurn => "ChatTurn",
            NodeKind::SimpleEvaluator => "SimpleEvaluator",
            NodeKind::ExpressionEvaluator => "ExpressionEvaluator",
            NodeKind::LlmScorer => "LLMScorer",
            NodeKind::ExternalEvaluator => "ExternalEvaluator",
            NodeKind::Vis => "Vis",
            NodeKind::Inspect => "Inspect",
            NodeKind::Comment => "Comment",
        }
    }

    pub fn is_input(self) -> bool {
        matches!(self, NodeKind::TextFields | NodeKind::Csv | NodeKind::TabularData)
    }

    pub fn is_query(self) -> bool {
        matches!(self, NodeKind::Prompt | NodeKind::ChatTurn)
    }

    pub fn is_evaluator(self) -> bool {
        matches!(
            self,
            NodeKind::SimpleEvaluator
                | NodeKind::ExpressionEvaluator
                | NodeKind::LlmScorer
                | NodeKind::ExternalEvaluator
        )
    }

    /// Nodes whose output is a set of responses.
    pub fn yields_responses(self) -> bool {
        self.is_query() || self.is_evaluator()
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub position: Position,
    #[serde(default = "empty_object")]
    pub data: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub source_handle: String,
    pub target: String,
    pub target_handle: String,
}

impl Edge {
    pub fn new(source: &str, source_handle: &str, target: &str, target_handle: &str) -> Self {
        Edge {
            source: source.into(),
            source_handle: source_handle.into(),
            target: target.into(),
            target_handle: target_handle.into(),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_n() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextField {
    pub text: String,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

/// Free-text values; each value may itself be a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextFieldsData {
    pub fields: Vec<TextField>,
}

/// Comma-separated literal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub text: String,
}

impl CsvData {
    pub fn values(&self) -> Vec<String> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(self.text.as_bytes());
        rd.records()
            .filter_map(Result::ok)
            .flat_map(|r| r.iter().map(str::to_string).collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .collect()
    }
}

/// Rows of named columns; a row's columns travel together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularData {
    pub columns: Vec<String>,
    #[serde(default)]
    pub rows: Vec<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptData {
    pub template: String,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_n")]
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatTurnData {
    pub template: String,
    /// Continue every conversation on these models instead of its own.
    #[serde(default)]
    pub models: Option<Vec<ModelSpec>>,
    #[serde(default = "default_n")]
    pub n: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionData {
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalData {
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisData {
    #[serde(default)]
    pub y_variable: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectData {
    #[serde(default)]
    pub group_by: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentData {
    #[serde(default)]
    pub text: String,
}

/// A node's data decoded according to its kind.
#[derive(Debug, Clone, PartialEq)]
pub enum NodePayload {
    TextFields(TextFieldsData),
    Csv(CsvData),
    TabularData(TabularData),
    Prompt(PromptData),
    ChatTurn(ChatTurnData),
    SimpleEvaluator(SimpleEvalSpec),
    ExpressionEvaluator(ExpressionData),
    LlmScorer(LlmScorerSpec),
    ExternalEvaluator(ExternalData),
    Vis(VisData),
    Inspect(InspectData),
    Comment(CommentData),
}

fn decode<T: DeserializeOwned>(data: &Value) -> Result<T, String> {
    serde_json::from_value(data.clone()).map_err(|e| e.to_string())
}

impl NodePayload {
    pub fn decode(kind: NodeKind, data: &Value) -> Result<Self, String> {
        Ok(match kind {
            NodeKind::TextFields => NodePayload::TextFields(decode(data)?),
            NodeKind::Csv => NodePayload::Csv(decode(data)?),
            NodeKind::TabularData => NodePayload::TabularData(decode(data)?),
            NodeKind::Prompt => NodePayload::Prompt(decode(data)?),
            NodeKind::ChatTurn => NodePayload::ChatTurn(decode(data)?),
            NodeKind::SimpleEvaluator => NodePayload::SimpleEvaluator(decode(data)?),
            NodeKind::ExpressionEvaluator => NodePayload::ExpressionEvaluator(decode(data)?),
            NodeKind::LlmScorer => NodePayload::LlmScorer(decode(data)?),
            NodeKind::ExternalEvaluator => NodePayload::ExternalEvaluator(decode(data)?),
            NodeKind::Vis => NodePayload::Vis(decode(data)?),
            NodeKind::Inspect => NodePayload::Inspect(decode(data)?),
            NodeKind::Comment => NodePayload::Comment(decode(data)?),
        })
    }
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, data: Value) -> Self {
        Node {
            id: id.into(),
            kind,
            position: Position::default(),
            data,
        }
    }

    pub fn payload(&self) -> Result<NodePayload, FlowError> {
        NodePayload::decode(self.kind, &self.data).map_err(|message| FlowError::Schema {
            node: self.id.clone(),
            message,
        })
    }

    /// Template variables of a Prompt or ChatTurn node, or of the enabled
    /// fields of a TextFields node.
    pub fn template_variables(&self) -> Vec<String> {
        let sources = match self.payload() {
            Ok(NodePayload::Prompt(p)) => vec![p.template],
            Ok(NodePayload::ChatTurn(c)) => vec![c.template],
            Ok(NodePayload::TextFields(t)) => t
                .fields
                .into_iter()
                .filter(|f| f.enabled)
                .map(|f| f.text)
                .collect(),
            _ => return Vec::new(),
        };
        let mut vars: Vec<String> = Vec::new();
        for src in sources {
            for v in parse_template(&src).map(|t| t.variables()).unwrap_or_default() {
                if !vars.contains(&v) {
                    vars.push(v);
                }
            }
        }
        vars
    }

    /// Handles edges may attach to as targets.
    pub fn input_handles(&self) -> Vec<String> {
        match self.kind {
            NodeKind::Prompt | NodeKind::TextFields => self.template_variables(),
            NodeKind::ChatTurn => {
                let mut h = vec![CONVERSATION_HANDLE.to_string()];
                h.extend(self.template_variables());
                h
            }
            k if k.is_evaluator() => vec![RESPONSES_HANDLE.to_string()],
            NodeKind::Vis | NodeKind::Inspect => vec![RESPONSES_HANDLE.to_string()],
            _ => Vec::new(),
        }
    }

    /// Handles edges may leave from.
    pub fn output_handles(&self) -> Vec<String> {
        match self.kind {
            NodeKind::TabularData => match self.payload() {
                Ok(NodePayload::TabularData(t)) => t.columns,
                _ => Vec::new(),
            },
            NodeKind::Vis | NodeKind::Inspect | NodeKind::Comment => Vec::new(),
            _ => vec![OUTPUT_HANDLE.to_string()],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowDocument {
    pub version: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Cached responses keyed by query key, for self-contained sharing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<BTreeMap<String, Vec<ResponseRecord>>>,
}

impl FlowDocument {
    pub fn new() -> Self {
        FlowDocument {
            version: FLOW_VERSION.into(),
            ..Default::default()
        }
    }

    pub fn with_node(mut self, id: &str, kind: NodeKind, data: Value) -> Self {
        self.nodes.push(Node::new(id, kind, data));
        self
    }

    pub fn with_edge(mut self, source: &str, source_handle: &str, target: &str, target_handle: &str) -> Self {
        self.edges.push(Edge::new(source, source_handle, target, target_handle));
        self
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn incoming<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.target == id)
    }

    pub fn outgoing<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.source == id)
    }

    /// Number of embedded cached responses.
    pub fn cached_records(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.values().map(Vec::len).sum())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("flow is not valid JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported flow version `{0}` (expected \"1\")")]
    UnsupportedVersion(String),
    #[error("node `{node}` has unknown kind `{kind}`")]
    UnknownKind { node: String, kind: String },
    #[error("node `{node}`: {message}")]
    Schema { node: String, message: String },
    #[error("flow structure: {0}")]
    Structure(String),
    #[error("cycle among nodes: {}", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("no node `{0}`")]
    NoSuchNode(String),
}

#[derive(Deserialize)]
struct RawNode {
    #[serde(default)]
    id: Option<String>,
    kind: String,
    #[serde(default)]
    position: Position,
    #[serde(default = "empty_object")]
    data: Value,
}

#[derive(Deserialize)]
struct RawDoc {
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<Edge>,
    #[serde(default)]
    cache: Option<BTreeMap<String, Vec<ResponseRecord>>>,
}

/// Parses a flow file and checks its structure: known kinds, payloads that
/// match their kind, unique ids and edges between existing nodes.
pub fn load_flow(bytes: &[u8]) -> Result<FlowDocument, FlowError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| FlowError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    match value.get("version") {
        Some(Value::String(v)) if v == FLOW_VERSION => {}
        Some(Value::String(v)) => return Err(FlowError::UnsupportedVersion(v.clone())),
        Some(other) => return Err(FlowError::UnsupportedVersion(other.to_string())),
        None => return Err(FlowError::Structure("missing `version`".into())),
    }
    let raw: RawDoc = serde_json::from_value(value).map_err(|e| FlowError::Structure(e.to_string()))?;

    let taken: BTreeSet<String> = raw.nodes.iter().filter_map(|n| n.id.clone()).collect();
    let mut counter = 0usize;
    let mut seen = BTreeSet::new();
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for rn in raw.nodes {
        let id = match rn.id {
            Some(id) => id,
            None => loop {
                counter += 1;
                let candidate = format!("n{counter}");
                if !taken.contains(&candidate) {
                    break candidate;
                }
            },
        };
        if !seen.insert(id.clone()) {
            return Err(FlowError::Schema {
                node: id,
                message: "duplicate node id".into(),
            });
        }
        let kind = NodeKind::from_str(&rn.kind).map_err(|kind| FlowError::UnknownKind {
            node: id.clone(),
            kind,
        })?;
        let node = Node {
            id,
            kind,
            position: rn.position,
            data: rn.data,
        };
        node.payload()?;
        nodes.push(node);
    }
    for e in &raw.edges {
        for end in [&e.source, &e.target] {
            if !seen.contains(end) {
                return Err(FlowError::Schema {
                    node: end.clone(),
                    message: format!(
                        "edge {}.{} -> {}.{} references missing node `{end}`",
                        e.source, e.source_handle, e.target, e.target_handle
                    ),
                });
            }
        }
    }
    Ok(FlowDocument {
        version: FLOW_VERSION.into(),
        nodes,
        edges: raw.edges,
        cache: raw.cache,
    })
}

/// Canonical JSON text: sorted keys, 2-space indent, LF, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("value serializes");
    let mut out = serde_json::to_vec_pretty(&v).expect("value serializes");
    out.push(b'\n');
    out
}

/// Canonical bytes of a document: nodes ordered by id, edges sorted.
pub fn save_flow(doc: &FlowDocument, include_cache: bool) -> Vec<u8> {
    let mut doc = doc.clone();
    doc.nodes.sort_by(|a, b| a.id.cmp(&b.id));
    doc.edges.sort();
    if !include_cache {
        doc.cache = None;
    }
    canonical_json(&doc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, node: Option<&str>, message: impl Into<String>) {
        self.errors.push(Issue {
            node: node.map(str::to_string),
            message: message.into(),
        });
    }

    fn warn(&mut self, node: &str, message: impl Into<String>) {
        self.warnings.push(Issue {
            node: Some(node.to_string()),
            message: message.into(),
        });
    }
}

fn source_allowed(target: &Node, handle: &str, source: NodeKind) -> bool {
    if target.kind == NodeKind::ChatTurn && handle == CONVERSATION_HANDLE {
        return source.is_query();
    }
    match target.kind {
        NodeKind::Prompt | NodeKind::ChatTurn | NodeKind::TextFields => source.is_input() || source.is_query(),
        NodeKind::Vis => source.is_evaluator(),
        _ => source.yields_responses(),
    }
}

/// Nodes on or between cycles, sorted.
fn cyclic_nodes(doc: &FlowDocument) -> Vec<String> {
    let mut alive: BTreeSet<&str> = doc.nodes.iter().map(|n| n.id.as_str()).collect();
    loop {
        let edges: Vec<&Edge> = doc
            .edges
            .iter()
            .filter(|e| alive.contains(e.source.as_str()) && alive.contains(e.target.as_str()))
            .collect();
        let removable: Vec<&str> = alive
            .iter()
            .copied()
            .filter(|id| {
                !edges.iter().any(|e| e.target == *id) || !edges.iter().any(|e| e.source == *id)
            })
            .collect();
        if removable.is_empty() {
            break;
        }
        for id in removable {
            alive.remove(id);
        }
    }
    alive.into_iter().map(str::to_string).collect()
}

/// Errors make a flow unrunnable; warnings flag likely mistakes.
pub fn validate_flow(doc: &FlowDocument) -> ValidationReport {
    let mut report = ValidationReport::default();
    let by_id: HashMap<&str, &Node> = doc.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    if by_id.len() != doc.nodes.len() {
        report.error(None, "duplicate node ids");
    }

    for node in &doc.nodes {
        let payload = match node.payload() {
            Ok(p) => p,
            Err(e) => {
                report.error(Some(&node.id), e.to_string());
                continue;
            }
        };
        let id = node.id.as_str();
        match &payload {
            NodePayload::TextFields(t) => {
                for f in &t.fields {
                    if let Err(e) = parse_template(&f.text) {
                        report.error(Some(id), format!("field `{}`: {e}", f.text));
                    }
                }
                if !t.fields.iter().any(|f| f.enabled) {
                    report.warn(id, "no enabled fields");
                }
            }
            NodePayload::Csv(c) => {
                if c.values().is_empty() {
                    report.warn(id, "no values");
                }
            }
            NodePayload::TabularData(t) => {
                if t.rows.is_empty() {
                    report.warn(id, "no rows");
                }
                for (i, row) in t.rows.iter().enumerate() {
                    if let Some(col) = row.keys().find(|k| !t.columns.contains(k)) {
                        report.error(Some(id), format!("row {i} has undeclared column `{col}`"));
                    }
                }
            }
            NodePayload::Prompt(PromptData { template, n, models }) => {
                if let Err(e) = parse_template(template) {
                    report.error(Some(id), format!("template: {e}"));
                }
                if *n == 0 {
                    report.error(Some(id), "n must be at least 1");
                }
                if models.is_empty() {
                    report.warn(id, "no models selected");
                }
            }
            NodePayload::ChatTurn(c) => {
                if let Err(e) = parse_template(&c.template) {
                    report.error(Some(id), format!("template: {e}"));
                }
                if c.n == 0 {
                    report.error(Some(id), "n must be at least 1");
                }
                if !doc.incoming(id).any(|e| e.target_handle == CONVERSATION_HANDLE) {
                    report.error(Some(id), "chat turn needs a conversation input");
                }
            }
            NodePayload::SimpleEvaluator(s) => {
                if let Err(e) = s.validate() {
                    report.error(Some(id), e.to_string());
                }
            }
            NodePayload::ExpressionEvaluator(x) => {
                if let Err(e) = parse_score_expr(&x.expression) {
                    report.error(Some(id), format!("expression: {e}"));
                }
            }
            NodePayload::LlmScorer(s) => {
                if let Err(e) = s.template() {
                    report.error(Some(id), e.to_string());
                }
            }
            _ => {}
        }

        if node.kind.is_query() || node.kind == NodeKind::TextFields {
            for v in node.template_variables() {
                if !doc.incoming(id).any(|e| e.target_handle == v) {
                    report.warn(id, format!("unconnected variable {v}"));
                }
            }
        }
        if (node.kind.is_evaluator() || matches!(node.kind, NodeKind::Vis | NodeKind::Inspect))
            && doc.incoming(id).next().is_none()
        {
            report.warn(id, "no responses connected");
        }
    }

    let mut seen_targets = BTreeSet::new();
    for e in &doc.edges {
        let (Some(src), Some(dst)) = (by_id.get(e.source.as_str()), by_id.get(e.target.as_str())) else {
            let missing = if by_id.contains_key(e.source.as_str()) { &e.target } else { &e.source };
            report.error(Some(missing), format!("edge references missing node `{missing}`"));
            continue;
        };
        if !src.output_handles().contains(&e.source_handle) {
            report.error(
                Some(&e.source),
                format!("`{}` has no output handle `{}`", e.source, e.source_handle),
            );
        }
        if !dst.input_handles().contains(&e.target_handle) {
            let what = if dst.kind.is_query() || dst.kind == NodeKind::TextFields {
                "template variable"
            } else {
                "input handle"
            };
            report.error(
                Some(&e.target),
                format!("`{}` has no {what} `{}`", e.target, e.target_handle),
            );
        } else if !source_allowed(dst, &e.target_handle, src.kind) {
            report.error(
                Some(&e.target),
                format!("{} node `{}` cannot feed `{}`.{}", src.kind, e.source, e.target, e.target_handle),
            );
        }
        if !seen_targets.insert((e.target.as_str(), e.target_handle.as_str())) {
            report.error(
                Some(&e.target),
                format!("more than one edge into `{}`.{}", e.target, e.target_handle),
            );
        }
    }

    let cyclic = cyclic_nodes(doc);
    if !cyclic.is_empty() {
        report.error(None, FlowError::Cycle(cyclic).to_string());
    }
    report
}

/// Every node that feeds `node_id`, directly or not, in topological order
/// and ending with `node_id`. Ties break by node id.
pub fn upstream_closure(doc: &FlowDocument, node_id: &str) -> Result<Vec<String>, FlowError> {
    if doc.node(node_id).is_none() {
        return Err(FlowError::NoSuchNode(node_id.to_string()));
    }
    let mut members: BTreeSet<&str> = BTreeSet::from([node_id]);
    let mut stack = vec![node_id];
    while let Some(id) = stack.pop() {
        for e in doc.incoming(id) {
            if members.insert(e.source.as_str()) {
                stack.push(e.source.as_str());
            }
        }
    }
    let edges: Vec<&Edge> = doc
        .edges
        .iter()
        .filter(|e| members.contains(e.source.as_str()) && members.contains(e.target.as_str()))
        .collect();
    let mut indegree: BTreeMap<&str, usize> = members.iter().map(|m| (*m, 0)).collect();
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in &edges {
        if succ.entry(e.source.as_str()).or_default().insert(e.target.as_str()) {
            *indegree.get_mut(e.target.as_str()).expect("member") += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::with_capacity(members.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for next in succ.get(id).into_iter().flatten() {
            let d = indegree.get_mut(next).expect("member");
            *d -= 1;
            if *d == 0 {
                ready.insert(next);
            }
        }
    }
    if order.len() != members.len() {
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        return Err(FlowError::Cycle(
            members.iter().filter(|m| !done.contains(*m)).map(|m| m.to_string()).collect(),
        ));
    }
    Ok(order)
}
