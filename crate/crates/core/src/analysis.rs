//! Views over response sets: grouped lists, pivot tables, plot series and
//! CSV export. All functions are pure and keep plan order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ResponseRecord;
use crate::eval::{Score, ScoreType, ScoreValue};
use crate::planner::ModelSpec;

/// Group label for records that lack the grouping variable.
pub const MISSING_VALUE: &str = "(none)";
/// Pivot name selecting the model dimension.
pub const MODEL_DIMENSION: &str = "model";

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("evaluator `{0}` has no scores to plot")]
    EmptyScores(String),
    #[error("evaluator `{node}` mixes score types: response {record} is {found}, expected {expected}")]
    MixedTypes {
        node: String,
        record: usize,
        expected: ScoreType,
        found: ScoreType,
    },
    #[error("evaluator `{0}` produced string scores; convert them to numbers (e.g. with to_num) or booleans to plot")]
    StringScores(String),
}

/// Stable grouping by key, in first-appearance order.
fn group_by<K: Eq + Hash + Clone, T>(items: impl IntoIterator<Item = T>, key: impl Fn(&T) -> K) -> Vec<(K, Vec<T>)> {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut out: Vec<(K, Vec<T>)> = Vec::new();
    for item in items {
        let k = key(&item);
        match index.get(&k) {
            Some(&i) => out[i].1.push(item),
            None => {
                index.insert(k.clone(), out.len());
                out.push((k, vec![item]));
            }
        }
    }
    out
}

fn value_of(r: &ResponseRecord, variable: &str) -> String {
    r.fill_history
        .get(variable)
        .cloned()
        .unwrap_or_else(|| MISSING_VALUE.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBucket {
    pub model: ModelSpec,
    pub records: Vec<ResponseRecord>,
}

/// All responses for one full binding, side by side per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub bindings: BTreeMap<String, String>,
    pub models: Vec<ModelBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub variable: String,
    pub value: String,
    pub children: GroupTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum GroupTree {
    Groups(Vec<Group>),
    Leaves(Vec<Leaf>),
}

impl GroupTree {
    /// Every record in the tree, depth first.
    pub fn records(&self) -> Vec<&ResponseRecord> {
        match self {
            GroupTree::Groups(gs) => gs.iter().flat_map(|g| g.children.records()).collect(),
            GroupTree::Leaves(ls) => ls
                .iter()
                .flat_map(|l| l.models.iter().flat_map(|m| m.records.iter()))
                .collect(),
        }
    }
}

/// Nests records by the variables in `by`, in that order.
pub fn group_responses(records: &[ResponseRecord], by: &[String]) -> GroupTree {
    let refs: Vec<&ResponseRecord> = records.iter().collect();
    group_level(&refs, by)
}

fn group_level(records: &[&ResponseRecord], by: &[String]) -> GroupTree {
    match by.split_first() {
        Some((variable, rest)) => GroupTree::Groups(
            group_by(records.iter().copied(), |r| value_of(r, variable))
                .into_iter()
                .map(|(value, members)| Group {
                    variable: variable.clone(),
                    value,
                    children: group_level(&members, rest),
                })
                .collect(),
        ),
        None => GroupTree::Leaves(
            group_by(records.iter().copied(), |r| r.fill_history.clone())
                .into_iter()
                .map(|(bindings, members)| Leaf {
                    bindings,
                    models: group_by(members, |r| serde_json::to_string(&r.model).expect("model serializes"))
                        .into_iter()
                        .map(|(_, rs)| ModelBucket {
                            model: rs[0].model.clone(),
                            records: rs.into_iter().cloned().collect(),
                        })
                        .collect(),
                })
                .collect(),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Values of `row_dimensions`, in order.
    pub key: Vec<String>,
    /// One cell per column.
    pub cells: Vec<Vec<CellEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableViewData {
    pub pivot: String,
    pub row_dimensions: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Variables bound in any record, sorted.
pub fn variables(records: &[ResponseRecord]) -> Vec<String> {
    let set: BTreeSet<&String> = records.iter().flat_map(|r| r.fill_history.keys()).collect();
    set.into_iter().cloned().collect()
}

/// Metadata keys present in any record, sorted.
pub fn metavariables(records: &[ResponseRecord]) -> Vec<String> {
    let set: BTreeSet<&String> = records.iter().flat_map(|r| r.metadata.keys()).collect();
    set.into_iter().cloned().collect()
}

/// Spreads records into a table whose columns are the values of `pivot`
/// (a variable name or [`MODEL_DIMENSION`]).
pub fn pivot_table(records: &[ResponseRecord], pivot: &str) -> TableViewData {
    let dim = |r: &ResponseRecord, d: &str| {
        if d == MODEL_DIMENSION {
            r.model_alias().to_string()
        } else {
            value_of(r, d)
        }
    };
    let mut row_dimensions: Vec<String> = variables(records)
        .into_iter()
        .filter(|v| v != pivot)
        .collect();
    if pivot != MODEL_DIMENSION {
        row_dimensions.push(MODEL_DIMENSION.to_string());
    }

    let columns: Vec<String> = group_by(records.iter(), |r| dim(r, pivot))
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let col_index: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let rows = group_by(records.iter().enumerate(), |(_, r)| {
        row_dimensions.iter().map(|d| dim(r, d)).collect::<Vec<_>>()
    })
    .into_iter()
    .map(|(key, members)| {
        let mut cells = vec![Vec::new(); columns.len()];
        for (i, r) in members {
            cells[col_index[dim(r, pivot).as_str()]].push(CellEntry {
                index: i,
                text: r.text().to_string(),
                scores: r.scores.clone(),
            });
        }
        TableRow { key, cells }
    })
    .collect();

    TableViewData {
        pivot: pivot.to_string(),
        row_dimensions,
        columns,
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisKind {
    Boxplot,
    AccuracyBar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub true_count: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VisPoint {
    Box(BoxStats),
    Accuracy(Accuracy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    /// One entry per x category; `None` where the category has no scores.
    pub points: Vec<Option<VisPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisSeries {
    pub kind: VisKind,
    pub evaluator_node: String,
    pub x: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_variable: Option<String>,
    pub series: Vec<Series>,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Tukey box statistics with median-exclusive quartiles.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = median_sorted(&v);
    let (q1, q3) = if n == 1 {
        (v[0], v[0])
    } else {
        let half = n / 2;
        (median_sorted(&v[..half]), median_sorted(&v[n - half..]))
    };
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    Some(BoxStats {
        n,
        min: v[0],
        q1,
        median,
        q3,
        max: v[n - 1],
        whisker_low: inside.first().copied().unwrap_or(median),
        whisker_high: inside.last().copied().unwrap_or(median),
        outliers: v.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
    })
}

/// Aggregates one evaluator's scores per model, optionally split into one
/// series per value of `y_variable`.
pub fn vis_series(
    records: &[ResponseRecord],
    evaluator_node: &str,
    y_variable: Option<&str>,
) -> Result<VisSeries, AnalysisError> {
    let scored: Vec<(usize, &ResponseRecord, &ScoreValue)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let s = r.scores.get(evaluator_node)?;
            (!s.value.is_error()).then_some((i, r, &s.value))
        })
        .collect();
    let Some(&(_, _, first)) = scored.first() else {
        return Err(AnalysisError::EmptyScores(evaluator_node.to_string()));
    };
    let expected = first.score_type().expect("errors filtered");
    for &(i, _, v) in &scored {
        let found = v.score_type().expect("errors filtered");
        if found != expected {
            return Err(AnalysisError::MixedTypes {
                node: evaluator_node.to_string(),
                record: i,
                expected,
                found,
            });
        }
    }
    let kind = match expected {
        ScoreType::Boolean => VisKind::AccuracyBar,
        ScoreType::Number => VisKind::Boxplot,
        ScoreType::String => return Err(AnalysisError::StringScores(evaluator_node.to_string())),
    };

    let x: Vec<String> = group_by(records.iter(), |r| r.model_alias().to_string())
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let split = group_by(scored.iter(), |(_, r, _)| match y_variable {
        Some(v) => value_of(r, v),
        None => evaluator_node.to_string(),
    });
    let series = split
        .into_iter()
        .map(|(name, members)| {
            let points = x
                .iter()
                .map(|alias| {
                    let vals: Vec<&ScoreValue> = members
                        .iter()
                        .filter(|(_, r, _)| r.model_alias() == alias)
                        .map(|(_, _, v)| *v)
                        .collect();
                    if vals.is_empty() {
                        return None;
                    }
                    Some(match kind {
                        VisKind::AccuracyBar => {
                            let true_count = vals.iter().filter(|v| ***v == ScoreValue::Bool(true)).count();
                            VisPoint::Accuracy(Accuracy {
                                true_count,
                                total: vals.len(),
                                accuracy: true_count as f64 / vals.len() as f64,
                            })
                        }
                        VisKind::Boxplot => {
                            let nums: Vec<f64> = vals
                                .iter()
                                .map(|v| match v {
                                    ScoreValue::Number(n) => *n,
                                    _ => unreachable!("type checked"),
                                })
                                .collect();
                            VisPoint::Box(box_stats(&nums).expect("non-empty"))
                        }
                    })
                })
                .collect();
            Series { name, points }
        })
        .collect();

    Ok(VisSeries {
        kind,
        evaluator_node: evaluator_node.to_string(),
        x,
        y_variable: y_variable.map(str::to_string),
        series,
    })
}

/// Text placed in the CSV `text` column for a failed query.
pub fn error_cell(r: &ResponseRecord) -> String {
    match r.error() {
        Some(e) => format!("ERROR {e}"),
        None => r.text().to_string(),
    }
}

/// RFC-4180 CSV, one row per record in the given order.
pub fn export_csv(records: &[ResponseRecord], include_scores: bool) -> Vec<u8> {
    let vars = variables(records);
    let metas = metavariables(records);
    let score_nodes: Vec<String> = if include_scores {
        let set: BTreeSet<&String> = records.iter().flat_map(|r| r.scores.keys()).collect();
        set.into_iter().cloned().collect()
    } else {
        Vec::new()
    };

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header: Vec<String> = vars.clone();
    header.extend(metas.iter().map(|m| format!("#{m}")));
    header.extend(["model", "generation_index", "text"].map(String::from));
    header.extend(score_nodes.iter().map(|n| format!("score:{n}")));
    w.write_record(&header).expect("in-memory write");

    for r in records {
        let mut row: Vec<String> = vars
            .iter()
            .map(|v| r.fill_history.get(v).cloned().unwrap_or_default())
            .collect();
        row.extend(metas.iter().map(|m| r.metadata.get(m).cloned().unwrap_or_default()));
        row.push(r.model_alias().to_string());
        row.push(r.index.to_string());
        row.push(error_cell(r));
        row.extend(
            score_nodes
                .iter()
                .map(|n| r.scores.get(n).map(|s| s.value.render()).unwrap_or_default()),
        );
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
