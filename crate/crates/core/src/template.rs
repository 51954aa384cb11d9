//! Prompt templates: `{variable}` placeholders, `{#name}` metavariables and
//! backslash-escaped literal braces.
//!
//! Filling a template produces a [`TemplateValue`] that remembers every
//! substitution on the path that produced it (its fill history), so that
//! downstream evaluators and inspectors can refer back to the inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{permute_bindings, VariableGroup};

/// Maximum number of nested fills along one chain of templates.
pub const MAX_CHAIN_DEPTH: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unbalanced brace at byte offset {offset}")]
    UnbalancedBrace { offset: usize },
    #[error("empty placeholder name at byte offset {offset}")]
    EmptyName { offset: usize },
    #[error("invalid character {ch:?} in placeholder name at byte offset {offset}")]
    InvalidName { offset: usize, ch: char },
    #[error("no value bound for template variable `{0}`")]
    MissingBinding(String),
    #[error("metavariable `{name}` not found; available keys: [{}]", available.join(", "))]
    UnresolvedMetavariable { name: String, available: Vec<String> },
    #[error("variable `{name}` filled with two different values (`{first}` vs `{second}`)")]
    HistoryCollision {
        name: String,
        first: String,
        second: String,
    },
    #[error("template chain deeper than {MAX_CHAIN_DEPTH} fills; check for a cycle")]
    DepthExceeded,
    #[error("variable `{0}` is not covered by any input")]
    UncoveredVariable(String),
    #[error("variable `{0}` is covered by more than one input")]
    DuplicateCoverage(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    /// Literal text. `text` has escapes removed, `raw` is the source slice.
    Literal { text: String, raw: String },
    Variable { name: String, raw: String },
    Metavariable { name: String, raw: String },
}

impl Segment {
    pub fn raw(&self) -> &str {
        match self {
            Segment::Literal { raw, .. }
            | Segment::Variable { raw, .. }
            | Segment::Metavariable { raw, .. } => raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        parse_template(text)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Distinct variable names in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for seg in &self.segments {
            if let Segment::Variable { name, .. } = seg {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    pub fn metavariables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for seg in &self.segments {
            if let Segment::Metavariable { name, .. } = seg {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    pub fn has_placeholders(&self) -> bool {
        self.segments
            .iter()
            .any(|s| !matches!(s, Segment::Literal { .. }))
    }

    /// Concatenation of the literal segments with escapes removed. Only
    /// meaningful for templates without placeholders.
    pub fn literal_text(&self) -> String {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Literal { text, .. } => Some(text.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// A piece of text together with the substitutions that produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateValue {
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fill_history: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    #[serde(skip)]
    pub depth: u32,
}

impl TemplateValue {
    pub fn literal(text: impl Into<String>) -> Self {
        TemplateValue {
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }
}

/// One element of the cross product: variable name to the value filling it.
pub type Bindings = BTreeMap<String, TemplateValue>;

pub fn parse_template(text: &str) -> Result<Template, TemplateError> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut lit_text = String::new();
    let mut lit_start = 0usize;
    let bytes = text.as_bytes();
    let mut chars = text.char_indices().peekable();

    let flush = |segments: &mut Vec<Segment>, lit_text: &mut String, from: usize, to: usize| {
        if from < to {
            segments.push(Segment::Literal {
                text: std::mem::take(lit_text),
                raw: text[from..to].to_string(),
            });
        }
    };

    while let Some((i, c)) = chars.next() {
        match c {
            '\\' if matches!(bytes.get(i + 1), Some(b'{') | Some(b'}')) => {
                let (_, brace) = chars.next().expect("peeked brace");
                lit_text.push(brace);
            }
            '}' => return Err(TemplateError::UnbalancedBrace { offset: i }),
            '{' => {
                flush(&mut segments, &mut lit_text, lit_start, i);
                let mut close = None;
                for (j, d) in chars.by_ref() {
                    match d {
                        '}' => {
                            close = Some(j);
                            break;
                        }
                        '{' => return Err(TemplateError::UnbalancedBrace { offset: i }),
                        _ => {}
                    }
                }
                let close = close.ok_or(TemplateError::UnbalancedBrace { offset: i })?;
                let inner = &text[i + 1..close];
                let raw = text[i..=close].to_string();
                let (is_meta, name_part, name_offset) = match inner.strip_prefix('#') {
                    Some(rest) => (true, rest, i + 2),
                    None => (false, inner, i + 1),
                };
                if let Some((k, ch)) = name_part
                    .char_indices()
                    .find(|(_, ch)| matches!(ch, '#' | '\n' | '\r'))
                {
                    return Err(TemplateError::InvalidName {
                        offset: name_offset + k,
                        ch,
                    });
                }
                let name = name_part.trim();
                if name.is_empty() {
                    return Err(TemplateError::EmptyName { offset: i });
                }
                segments.push(if is_meta {
                    Segment::Metavariable {
                        name: name.to_string(),
                        raw,
                    }
                } else {
                    Segment::Variable {
                        name: name.to_string(),
                        raw,
                    }
                });
                lit_start = close + 1;
            }
            _ => lit_text.push(c),
        }
    }
    flush(&mut segments, &mut lit_text, lit_start, text.len());

    Ok(Template {
        source: text.to_string(),
        segments,
    })
}

/// Escapes every brace so the result parses as pure literal text.
pub fn escape_literal(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '{' || c == '}' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn merge_into(
    target: &mut BTreeMap<String, String>,
    key: &str,
    value: &str,
) -> Result<(), TemplateError> {
    match target.get(key) {
        Some(existing) if existing != value => Err(TemplateError::HistoryCollision {
            name: key.to_string(),
            first: existing.clone(),
            second: value.to_string(),
        }),
        Some(_) => Ok(()),
        None => {
            target.insert(key.to_string(), value.to_string());
            Ok(())
        }
    }
}

/// Looks `name` up first in the fill history, then in the metadata.
pub fn lookup_metavariable<'a>(
    name: &str,
    fill_history: &'a BTreeMap<String, String>,
    metadata: &'a BTreeMap<String, String>,
) -> Result<&'a str, TemplateError> {
    if let Some(v) = fill_history.get(name) {
        return Ok(v);
    }
    if let Some(v) = metadata.get(name) {
        return Ok(v);
    }
    let mut available: Vec<String> = fill_history.keys().chain(metadata.keys()).cloned().collect();
    available.sort();
    available.dedup();
    Err(TemplateError::UnresolvedMetavariable {
        name: name.to_string(),
        available,
    })
}

/// Resolves a metavariable against a set of bindings. Each binding's own
/// history (including the variable it fills) is searched before any metadata.
pub fn resolve_metavariable(name: &str, bindings: &Bindings) -> Result<String, TemplateError> {
    let (history, metadata) = collect_context(bindings)?;
    lookup_metavariable(name, &history, &metadata).map(str::to_string)
}

type StringMap = BTreeMap<String, String>;

fn collect_context(bindings: &Bindings) -> Result<(StringMap, StringMap), TemplateError> {
    let mut history = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    for (var, value) in bindings {
        for (k, v) in &value.fill_history {
            merge_into(&mut history, k, v)?;
        }
        merge_into(&mut history, var, &value.text)?;
        for (k, v) in &value.metadata {
            metadata.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    Ok((history, metadata))
}

pub fn fill(template: &Template, bindings: &Bindings) -> Result<TemplateValue, TemplateError> {
    let used: Vec<String> = template.variables();
    for var in &used {
        if !bindings.contains_key(var) {
            return Err(TemplateError::MissingBinding(var.clone()));
        }
    }

    // Only bindings the template actually uses contribute to the result.
    let relevant: Bindings = bindings
        .iter()
        .filter(|(k, _)| used.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let (history, metadata) = collect_context(&relevant)?;

    let depth = relevant.values().map(|v| v.depth).max().unwrap_or(0) + 1;
    if depth > MAX_CHAIN_DEPTH {
        return Err(TemplateError::DepthExceeded);
    }

    let mut text = String::new();
    for seg in template.segments() {
        match seg {
            Segment::Literal { text: t, .. } => text.push_str(t),
            Segment::Variable { name, .. } => text.push_str(&relevant[name].text),
            Segment::Metavariable { name, .. } => {
                text.push_str(lookup_metavariable(name, &history, &metadata)?)
            }
        }
    }

    Ok(TemplateValue {
        text,
        fill_history: history,
        metadata,
        depth,
    })
}

/// Expands templated input fields against grouped incoming values. Fields
/// without placeholders pass through with an empty history.
pub fn expand_fields(
    fields: &[String],
    groups: &[VariableGroup],
) -> Result<Vec<TemplateValue>, TemplateError> {
    let mut out = Vec::new();
    for field in fields {
        let template = parse_template(field)?;
        if !template.has_placeholders() {
            out.push(TemplateValue::literal(template.literal_text()));
            continue;
        }
        for bindings in permute_bindings(&template, groups)? {
            out.push(fill(&template, &bindings)?);
        }
    }
    Ok(out)
}

/// Expands chained templates where every incoming variable is its own group.
pub fn expand_chained(
    field_templates: &[String],
    incoming: &BTreeMap<String, Vec<TemplateValue>>,
) -> Result<Vec<TemplateValue>, TemplateError> {
    let groups: Vec<VariableGroup> = incoming
        .iter()
        .map(|(var, values)| VariableGroup::single(var.clone(), var.clone(), values.clone()))
        .collect();
    expand_fields(field_templates, &groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lit(t: &str) -> Segment {
        Segment::Literal {
            text: t.into(),
            raw: t.into(),
        }
    }

    #[test]
    fn parses_variable_after_literal() {
        let t = parse_template("Convert {input}").unwrap();
        assert_eq!(
            t.segments(),
            &[
                lit("Convert "),
                Segment::Variable {
                    name: "input".into(),
                    raw: "{input}".into()
                }
            ]
        );
    }

    #[test]
    fn separates_variables_and_metavariables() {
        let t = parse_template("{command}: {input} (expect {#Ideal})").unwrap();
        assert_eq!(t.variables(), vec!["command", "input"]);
        assert_eq!(t.metavariables(), vec!["Ideal"]);
    }

    #[test]
    fn escaped_braces_are_literal() {
        let t = parse_template("print \\{x\\}").unwrap();
        assert_eq!(t.segments().len(), 1);
        assert_eq!(t.literal_text(), "print {x}");
        assert!(t.variables().is_empty());
    }

    #[test]
    fn names_are_trimmed() {
        let t = parse_template("{ topic }").unwrap();
        assert_eq!(t.variables(), vec!["topic"]);
    }

    #[test]
    fn brace_errors_carry_offsets() {
        assert_eq!(
            parse_template("ab {x").unwrap_err(),
            TemplateError::UnbalancedBrace { offset: 3 }
        );
        assert_eq!(
            parse_template("ab } x").unwrap_err(),
            TemplateError::UnbalancedBrace { offset: 3 }
        );
        assert_eq!(
            parse_template("a {  } b").unwrap_err(),
            TemplateError::EmptyName { offset: 2 }
        );
        assert_eq!(
            parse_template("{#}").unwrap_err(),
            TemplateError::EmptyName { offset: 0 }
        );
        assert!(matches!(
            parse_template("{a#b}").unwrap_err(),
            TemplateError::InvalidName { offset: 2, ch: '#' }
        ));
    }

    #[test]
    fn escape_examples() {
        assert_eq!(escape_literal("a{b}"), "a\\{b\\}");
        assert_eq!(escape_literal(""), "");
    }

    #[test]
    fn fill_records_history() {
        let t = parse_template("Convert {x}").unwrap();
        let mut b = Bindings::new();
        b.insert("x".into(), TemplateValue::literal("hi"));
        let v = fill(&t, &b).unwrap();
        assert_eq!(v.text, "Convert hi");
        assert_eq!(v.fill_history, BTreeMap::from([("x".into(), "hi".into())]));
    }

    #[test]
    fn fill_two_variable_template() {
        let t = parse_template("{command}\n\n{input}").unwrap();
        let mut b = Bindings::new();
        b.insert(
            "command".into(),
            TemplateValue::literal("Expand the text into a paragraph."),
        );
        b.insert(
            "input".into(),
            TemplateValue::literal("I go to 市场 yesterday, buy apple."),
        );
        let v = fill(&t, &b).unwrap();
        assert!(v.text.starts_with("Expand the text"));
        assert!(v.text.ends_with("buy apple."));
        assert_eq!(v.fill_history.len(), 2);
    }

    #[test]
    fn fill_carries_upstream_history() {
        let t = parse_template("Q: {question}").unwrap();
        let upstream = TemplateValue {
            text: "Why are cats curious?".into(),
            fill_history: BTreeMap::from([("topic".into(), "cats".into())]),
            ..Default::default()
        };
        let v = fill(&t, &Bindings::from([("question".into(), upstream)])).unwrap();
        assert_eq!(
            v.fill_history,
            BTreeMap::from([
                ("topic".into(), "cats".into()),
                ("question".into(), "Why are cats curious?".into())
            ])
        );
    }

    #[test]
    fn repeated_variable_uses_one_binding() {
        let t = parse_template("{x} and {x}").unwrap();
        let v = fill(&t, &Bindings::from([("x".into(), TemplateValue::literal("a"))])).unwrap();
        assert_eq!(v.text, "a and a");
        assert_eq!(v.fill_history.len(), 1);
    }

    #[test]
    fn fill_errors() {
        let t = parse_template("{a} {b}").unwrap();
        let b = Bindings::from([("a".into(), TemplateValue::literal("1"))]);
        assert_eq!(
            fill(&t, &b).unwrap_err(),
            TemplateError::MissingBinding("b".into())
        );

        let clash = Bindings::from([
            (
                "a".into(),
                TemplateValue {
                    text: "1".into(),
                    fill_history: BTreeMap::from([("k".into(), "x".into())]),
                    ..Default::default()
                },
            ),
            (
                "b".into(),
                TemplateValue {
                    text: "2".into(),
                    fill_history: BTreeMap::from([("k".into(), "y".into())]),
                    ..Default::default()
                },
            ),
        ]);
        assert!(matches!(
            fill(&t, &clash).unwrap_err(),
            TemplateError::HistoryCollision { .. }
        ));
    }

    #[test]
    fn depth_guard_trips() {
        let t = parse_template("{x}").unwrap();
        let mut v = TemplateValue::literal("seed");
        for _ in 0..MAX_CHAIN_DEPTH {
            v = fill(&t, &Bindings::from([("x".into(), v)])).map(|mut r| {
                // Drop history so collisions don't mask the depth check.
                r.fill_history.clear();
                r
            })
            .unwrap();
        }
        assert_eq!(
            fill(&t, &Bindings::from([("x".into(), v)])).unwrap_err(),
            TemplateError::DepthExceeded
        );
    }

    fn table_row() -> Bindings {
        let row = BTreeMap::from([
            ("Prompt".to_string(), "2+2?".to_string()),
            ("Ideal".to_string(), "4".to_string()),
        ]);
        Bindings::from([(
            "Prompt".into(),
            TemplateValue::literal("2+2?").with_metadata(row),
        )])
    }

    #[test]
    fn metavariable_from_table_metadata() {
        assert_eq!(resolve_metavariable("Ideal", &table_row()).unwrap(), "4");
        let t = parse_template("{Prompt} (expect {#Ideal})").unwrap();
        assert_eq!(fill(&t, &table_row()).unwrap().text, "2+2? (expect 4)");
    }

    #[test]
    fn metavariable_prefers_history() {
        let b = Bindings::from([(
            "q".into(),
            TemplateValue {
                text: "t".into(),
                fill_history: BTreeMap::from([("name".into(), "from-history".into())]),
                metadata: BTreeMap::from([("name".into(), "from-meta".into())]),
                depth: 0,
            },
        )]);
        assert_eq!(resolve_metavariable("name", &b).unwrap(), "from-history");
    }

    #[test]
    fn unresolved_metavariable_lists_keys() {
        match resolve_metavariable("Missing", &table_row()).unwrap_err() {
            TemplateError::UnresolvedMetavariable { name, available } => {
                assert_eq!(name, "Missing");
                assert_eq!(available, vec!["Ideal", "Prompt"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chained_expansion_examples() {
        let incoming = BTreeMap::from([(
            "country".to_string(),
            vec![TemplateValue::literal("France"), TemplateValue::literal("Japan")],
        )]);
        let out = expand_chained(&["What is the capital of {country}?".into()], &incoming).unwrap();
        let texts: Vec<_> = out.iter().map(|v| v.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "What is the capital of France?",
                "What is the capital of Japan?"
            ]
        );
        assert_eq!(out[1].fill_history["country"], "Japan");

        let out = expand_chained(&["hello".into()], &incoming).unwrap();
        assert_eq!(out, vec![TemplateValue::literal("hello")]);
    }

    #[test]
    fn two_fields_over_five_values() {
        let values: Vec<_> = ["a", "b", "c", "d", "e"]
            .into_iter()
            .map(TemplateValue::literal)
            .collect();
        let incoming = BTreeMap::from([("game".to_string(), values)]);
        let out = expand_chained(
            &["Tell me about {game}".into(), "Who made {game}?".into()],
            &incoming,
        )
        .unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out[0].text, "Tell me about a");
        assert_eq!(out[5].text, "Who made a?");
    }

    /// Naive oracle: replace each `{name}` occurrence left to right.
    fn naive_fill(src: &str, values: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        let mut rest = src;
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let end = rest[start..].find('}').unwrap() + start;
            out.push_str(&values[&rest[start + 1..end]]);
            rest = &rest[end + 1..];
        }
        out.push_str(rest);
        out
    }

    proptest! {
        #[test]
        fn escaping_never_introduces_variables(s in ".*") {
            let t = parse_template(&escape_literal(&s)).unwrap();
            prop_assert!(t.variables().is_empty());
            prop_assert!(t.metavariables().is_empty());
            prop_assert_eq!(t.literal_text(), s);
        }

        #[test]
        fn segments_render_source(s in "[a-z {}#\\\\]{0,40}") {
            if let Ok(t) = parse_template(&s) {
                let joined: String = t.segments().iter().map(Segment::raw).collect();
                prop_assert_eq!(joined, s);
            }
        }

        #[test]
        fn fill_matches_naive_substitution(
            parts in proptest::collection::vec(("[a-z .,]{0,6}", 0usize..3), 0..6),
            vals in proptest::collection::vec("[a-z{} ]{0,5}", 3),
        ) {
            let names = ["alpha", "beta", "gamma"];
            let mut src = String::new();
            for (lit, var) in &parts {
                src.push_str(lit);
                src.push('{');
                src.push_str(names[*var]);
                src.push('}');
            }
            let values: BTreeMap<String, String> = names
                .iter()
                .zip(&vals)
                .map(|(n, v)| (n.to_string(), v.clone()))
                .collect();
            let bindings: Bindings = values
                .iter()
                .map(|(k, v)| (k.clone(), TemplateValue::literal(v.clone())))
                .collect();
            let t = parse_template(&src).unwrap();
            let filled = fill(&t, &bindings).unwrap();
            prop_assert_eq!(&filled.text, &naive_fill(&src, &values));
            for var in t.variables() {
                prop_assert!(filled.fill_history.contains_key(&var));
            }
        }
    }
}
