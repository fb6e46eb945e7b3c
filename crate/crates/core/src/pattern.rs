//! Trigger filter patterns: nested objects whose leaves are non-empty lists
//! of scalar literals. A body matches when, for every leaf path, the value at
//! that path equals one of the listed literals.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::{Map, Number, Value};

use crate::broker::Record;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatternError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    SyntaxError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid leaf at `{path}`: {reason}")]
    InvalidLeaf { path: String, reason: String },
    #[error("unsupported operator at `{path}`")]
    UnsupportedOperator { path: String },
}

impl PatternError {
    pub fn code(&self) -> &'static str {
        match self {
            PatternError::SyntaxError { .. } => "SYNTAX_ERROR",
            PatternError::InvalidLeaf { .. } => "INVALID_LEAF",
            PatternError::UnsupportedOperator { .. } => "UNSUPPORTED_OPERATOR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Bool(bool),
    Number(Number),
    String(String),
}

impl Scalar {
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Null => Some(Scalar::Null),
            Value::Bool(b) => Some(Scalar::Bool(*b)),
            Value::Number(n) => Some(Scalar::Number(n.clone())),
            Value::String(s) => Some(Scalar::String(s.clone())),
            _ => None,
        }
    }

    fn to_value(&self) -> Value {
        match self {
            Scalar::Null => Value::Null,
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Number(n) => Value::Number(n.clone()),
            Scalar::String(s) => Value::String(s.clone()),
        }
    }

    /// Same type and value; numbers compare numerically.
    fn equals(&self, v: &Value) -> bool {
        match (self, v) {
            (Scalar::Null, Value::Null) => true,
            (Scalar::Bool(a), Value::Bool(b)) => a == b,
            (Scalar::String(a), Value::String(b)) => a == b,
            (Scalar::Number(a), Value::Number(b)) => numbers_equal(a, b),
            _ => false,
        }
    }
}

fn numbers_equal(a: &Number, b: &Number) -> bool {
    if let (Some(x), Some(y)) = (a.as_i64(), b.as_i64()) {
        return x == y;
    }
    if let (Some(x), Some(y)) = (a.as_u64(), b.as_u64()) {
        return x == y;
    }
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<Scalar>),
    Object(BTreeMap<String, Node>),
}

/// A validated, immutable pattern. The empty pattern matches every body.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pattern {
    root: BTreeMap<String, Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Match,
    NoMatch,
    NonStructured,
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Self, PatternError> {
        let value: Value = serde_json::from_str(text).map_err(|e| PatternError::SyntaxError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self, PatternError> {
        match value {
            Value::Object(map) => Ok(Self {
                root: parse_object(map, "")?,
            }),
            _ => Err(PatternError::InvalidLeaf {
                path: String::new(),
                reason: "pattern root must be an object".into(),
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_empty()
    }

    pub fn to_value(&self) -> Value {
        object_to_value(&self.root)
    }

    pub fn matches(&self, body: &Value) -> bool {
        match_object(&self.root, body)
    }

    /// Matches against `{"offset", "timestamp", "key", "value"}` where
    /// `value` is the decoded record body.
    pub fn match_record(&self, record: &Record) -> Verdict {
        match record_envelope(record) {
            Some(env) if self.matches(&env) => Verdict::Match,
            Some(_) => Verdict::NoMatch,
            None => Verdict::NonStructured,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_value())
    }
}

/// Decodes a record value as a structured document and wraps it in the
/// envelope patterns are evaluated against.
pub fn record_envelope(record: &Record) -> Option<Value> {
    let value: Value = serde_json::from_slice(&record.value).ok()?;
    let mut env = Map::new();
    env.insert("offset".into(), Value::from(record.offset));
    env.insert("timestamp".into(), Value::from(record.timestamp));
    if let Ok(k) = std::str::from_utf8(&record.key) {
        env.insert("key".into(), Value::from(k));
    }
    env.insert("value".into(), value);
    Some(Value::Object(env))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn parse_object(
    map: &Map<String, Value>,
    path: &str,
) -> Result<BTreeMap<String, Node>, PatternError> {
    let mut out = BTreeMap::new();
    for (k, v) in map {
        let here = join(path, k);
        let node = match v {
            Value::Object(inner) => Node::Object(parse_object(inner, &here)?),
            Value::Array(items) => Node::Leaf(parse_leaf(items, &here)?),
            _ => {
                return Err(PatternError::InvalidLeaf {
                    path: here,
                    reason: "leaf must be a list of literals".into(),
                })
            }
        };
        out.insert(k.clone(), node);
    }
    Ok(out)
}

fn parse_leaf(items: &[Value], path: &str) -> Result<Vec<Scalar>, PatternError> {
    if items.is_empty() {
        return Err(PatternError::InvalidLeaf {
            path: path.to_string(),
            reason: "leaf list is empty".into(),
        });
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match item {
            Value::Object(_) => Err(PatternError::UnsupportedOperator {
                path: format!("{path}[{i}]"),
            }),
            Value::Array(_) => Err(PatternError::InvalidLeaf {
                path: format!("{path}[{i}]"),
                reason: "nested lists are not allowed".into(),
            }),
            other => Ok(Scalar::from_value(other).expect("scalar")),
        })
        .collect()
}

fn object_to_value(map: &BTreeMap<String, Node>) -> Value {
    let mut out = Map::new();
    for (k, node) in map {
        let v = match node {
            Node::Leaf(items) => Value::Array(items.iter().map(Scalar::to_value).collect()),
            Node::Object(inner) => object_to_value(inner),
        };
        out.insert(k.clone(), v);
    }
    Value::Object(out)
}

fn match_object(pattern: &BTreeMap<String, Node>, body: &Value) -> bool {
    pattern.iter().all(|(k, node)| match node {
        Node::Object(inner) if inner.is_empty() => true,
        Node::Object(inner) => body
            .get(k)
            .is_some_and(|b| b.is_object() && match_object(inner, b)),
        Node::Leaf(items) => body.get(k).is_some_and(|b| match_leaf(items, b)),
    })
}

fn match_leaf(items: &[Scalar], body: &Value) -> bool {
    match body {
        Value::Array(elems) => elems.iter().any(|e| items.iter().any(|s| s.equals(e))),
        Value::Object(_) => false,
        scalar => items.iter().any(|s| s.equals(scalar)),
    }
}

/// Parses trigger filter criteria: a list of `{"Pattern": <document>}`
/// entries, where the document is an escaped JSON string or an inline
/// object. Multiple patterns are OR-ed.
pub fn parse_filter_criteria(value: &Value) -> Result<Vec<Pattern>, PatternError> {
    let invalid = |reason: &str| PatternError::InvalidLeaf {
        path: "Filters".into(),
        reason: reason.into(),
    };
    let items = value
        .as_array()
        .ok_or_else(|| invalid("filter criteria must be a list of {\"Pattern\": ...} entries"))?;
    items
        .iter()
        .map(|item| match item.get("Pattern") {
            Some(Value::String(text)) => Pattern::parse(text),
            Some(obj @ Value::Object(_)) => Pattern::from_value(obj),
            _ => Err(invalid("each entry needs a \"Pattern\" document")),
        })
        .collect()
}

/// Renders patterns in the filter-criteria shape with escaped documents.
pub fn filter_criteria_value(patterns: &[Pattern]) -> Value {
    Value::Array(
        patterns
            .iter()
            .map(|p| serde_json::json!({ "Pattern": p.to_string() }))
            .collect(),
    )
}

/// True when any pattern matches; an empty set matches everything.
pub fn any_match(patterns: &[Pattern], record: &Record) -> Verdict {
    if patterns.is_empty() {
        return if record_envelope(record).is_some() {
            Verdict::Match
        } else {
            Verdict::NonStructured
        };
    }
    let Some(env) = record_envelope(record) else {
        return Verdict::NonStructured;
    };
    if patterns.iter().any(|p| p.matches(&env)) {
        Verdict::Match
    } else {
        Verdict::NoMatch
    }
}
