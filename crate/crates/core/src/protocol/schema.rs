//! Field-by-field validation of payload bodies against the contract of
//! their kind. Violations are collected, not short-circuited, so a rejected
//! document reports everything that is wrong with it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::document::Document;
use super::PayloadKind;
use crate::agents::contracts::{CollaborationDecision, DecompositionPlan, ProviderResponse};
use crate::planner::{ActionChoice, StateTree};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Problem {
    Missing,
    Extra,
    WrongType { expected: &'static str, found: &'static str },
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub problem: Problem,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.problem {
            Problem::Missing => write!(f, "{}: missing", self.path),
            Problem::Extra => write!(f, "{}: unexpected field", self.path),
            Problem::WrongType { expected, found } => {
                write!(f, "{}: expected {expected}, found {found}", self.path)
            }
            Problem::Invalid(msg) => write!(f, "{}: {msg}", self.path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema violation ({kind}): {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct SchemaViolation {
    pub kind: String,
    pub violations: Vec<Violation>,
}

impl SchemaViolation {
    pub fn new(kind: impl Into<String>, violations: Vec<Violation>) -> Self {
        Self { kind: kind.into(), violations }
    }

    pub fn single(kind: impl Into<String>, path: impl Into<String>, problem: Problem) -> Self {
        Self::new(kind, vec![Violation { path: path.into(), problem }])
    }

    /// Whether any violation sits at `path` (exact match).
    pub fn mentions(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path == path)
    }
}

/// Accumulates violations while walking one document.
#[derive(Debug, Default)]
pub struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, path: impl Into<String>, problem: Problem) {
        self.violations.push(Violation { path: path.into(), problem });
    }

    pub fn invalid(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.push(path, Problem::Invalid(msg.into()));
    }

    pub fn count(&self) -> usize {
        self.violations.len()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn finish(self, kind: &str) -> Result<(), SchemaViolation> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(SchemaViolation::new(kind, self.violations))
        }
    }

    /// Open `doc` as an object at `path`; reports a type error otherwise.
    pub fn object<'d>(&mut self, path: &str, doc: &'d Document) -> Option<Fields<'d>> {
        match doc {
            Document::Object(map) => Some(Fields { path: path.to_owned(), map, seen: BTreeSet::new() }),
            other => {
                self.push(path, Problem::WrongType { expected: "object", found: other.type_name() });
                None
            }
        }
    }

    pub fn string<'d>(&mut self, path: &str, doc: &'d Document) -> Option<&'d str> {
        match doc {
            Document::Str(s) => Some(s),
            other => {
                self.push(path, Problem::WrongType { expected: "string", found: other.type_name() });
                None
            }
        }
    }

    pub fn non_empty_string<'d>(&mut self, path: &str, doc: &'d Document) -> Option<&'d str> {
        let s = self.string(path, doc)?;
        if s.trim().is_empty() {
            self.invalid(path, "must be non-empty");
            None
        } else {
            Some(s)
        }
    }

    pub fn boolean(&mut self, path: &str, doc: &Document) -> Option<bool> {
        match doc {
            Document::Bool(b) => Some(*b),
            other => {
                self.push(path, Problem::WrongType { expected: "boolean", found: other.type_name() });
                None
            }
        }
    }

    pub fn number(&mut self, path: &str, doc: &Document) -> Option<f64> {
        match doc.as_f64() {
            Some(v) if v.is_finite() => Some(v),
            Some(_) => {
                self.invalid(path, "must be finite");
                None
            }
            None => {
                self.push(path, Problem::WrongType { expected: "number", found: doc.type_name() });
                None
            }
        }
    }

    pub fn unsigned(&mut self, path: &str, doc: &Document) -> Option<u64> {
        match doc.as_u64() {
            Some(v) => Some(v),
            None => {
                self.push(path, Problem::WrongType { expected: "unsigned integer", found: doc.type_name() });
                None
            }
        }
    }

    pub fn array<'d>(&mut self, path: &str, doc: &'d Document) -> Option<&'d [Document]> {
        match doc {
            Document::Array(items) => Some(items),
            other => {
                self.push(path, Problem::WrongType { expected: "array", found: other.type_name() });
                None
            }
        }
    }

    pub fn string_array(&mut self, path: &str, doc: &Document) -> Option<Vec<String>> {
        let items = self.array(path, doc)?;
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            match self.string(&format!("{path}[{i}]"), item) {
                Some(s) => out.push(s.to_owned()),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    pub fn number_array(&mut self, path: &str, doc: &Document) -> Option<Vec<f64>> {
        let items = self.array(path, doc)?;
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            match self.number(&format!("{path}[{i}]"), item) {
                Some(v) => out.push(v),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    pub fn nullable_string<'d>(&mut self, path: &str, doc: &'d Document) -> Option<Option<&'d str>> {
        match doc {
            Document::Null => Some(None),
            _ => self.string(path, doc).map(Some),
        }
    }

    /// Close an object: every key not claimed through `req`/`opt` is extra.
    pub fn close(&mut self, fields: Fields<'_>) {
        for key in fields.map.keys() {
            if !fields.seen.contains(key.as_str()) {
                self.push(fields.child(key), Problem::Extra);
            }
        }
    }
}

/// Key access into one object, remembering which keys were claimed.
#[derive(Debug)]
pub struct Fields<'d> {
    path: String,
    map: &'d BTreeMap<String, Document>,
    seen: BTreeSet<String>,
}

impl<'d> Fields<'d> {
    pub fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_owned()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn req(&mut self, ck: &mut Checker, key: &str) -> Option<&'d Document> {
        self.seen.insert(key.to_owned());
        let found = self.map.get(key);
        if found.is_none() {
            ck.push(self.child(key), Problem::Missing);
        }
        found
    }

    pub fn opt(&mut self, key: &str) -> Option<&'d Document> {
        self.seen.insert(key.to_owned());
        self.map.get(key)
    }
}

/// Context needed by contracts that reference an external vocabulary.
#[derive(Debug, Clone, Default)]
pub struct Schemas {
    /// When set, planner contracts must only use these actions.
    pub action_vocab: Option<BTreeSet<String>>,
}

impl Schemas {
    pub fn with_actions<S: Into<String>>(actions: impl IntoIterator<Item = S>) -> Self {
        Self { action_vocab: Some(actions.into_iter().map(Into::into).collect()) }
    }

    pub fn validate(&self, kind: PayloadKind, body: &Document) -> Result<(), SchemaViolation> {
        validate_schema(kind, body, self)
    }
}

/// Check `body` against the registered contract for `kind`.
pub fn validate_schema(kind: PayloadKind, body: &Document, schemas: &Schemas) -> Result<(), SchemaViolation> {
    let name = kind.as_str();
    let vocab = schemas.action_vocab.as_ref();
    match kind {
        PayloadKind::SubtaskAssign => DecompositionPlan::from_document(body).map(drop),
        PayloadKind::AgentResponse => {
            if body.get("collaboration_required").is_some() {
                CollaborationDecision::from_document(body).map(drop)
            } else if body.get("response").is_some() {
                ProviderResponse::from_document(body).map(drop)
            } else if body.get("selected_action").is_some() {
                ActionChoice::from_document(body, vocab).map(drop)
            } else {
                Err(SchemaViolation::single(
                    name,
                    "$",
                    Problem::Invalid("expected a collaboration decision, provider response or action choice".into()),
                ))
            }
        }
        PayloadKind::HtnMemory => {
            if body.get("next_state").is_some() {
                StateTree::from_document(body, vocab).map(drop)
            } else {
                let mut ck = Checker::new();
                if let Some(mut f) = ck.object("", body) {
                    if let Some(d) = f.req(&mut ck, "memory") {
                        ck.number_array("memory", d);
                    }
                    if let Some(d) = f.req(&mut ck, "tick") {
                        ck.unsigned("tick", d);
                    }
                    ck.close(f);
                }
                ck.finish(name)
            }
        }
        PayloadKind::MotionPrimitive => simple(name, body, |ck, f| {
            if let Some(d) = f.req(ck, "primitive") {
                ck.non_empty_string("primitive", d);
            }
            if let Some(d) = f.req(ck, "values") {
                ck.number_array("values", d);
            }
        }),
        PayloadKind::HighLevelCommand => simple(name, body, |ck, f| {
            if let Some(d) = f.req(ck, "goal") {
                ck.non_empty_string("goal", d);
            }
            if let Some(d) = f.opt("sensors") {
                if let Some(mut s) = ck.object("sensors", d) {
                    let keys: Vec<String> = s.map.keys().cloned().collect();
                    for k in keys {
                        if let Some(v) = s.opt(&k) {
                            ck.string(&format!("sensors.{k}"), v);
                        }
                    }
                    ck.close(s);
                }
            }
            if let Some(d) = f.opt("feedback") {
                if !matches!(d, Document::Null | Document::Str(_) | Document::Object(_)) {
                    ck.push("feedback", Problem::WrongType { expected: "null, string or object", found: d.type_name() });
                }
            }
            if let Some(d) = f.opt("reason") {
                ck.string("reason", d);
            }
        }),
        PayloadKind::EnvObservation => simple(name, body, |ck, f| {
            if let Some(d) = f.req(ck, "tick") {
                ck.unsigned("tick", d);
            }
            if let Some(d) = f.req(ck, "objects") {
                if let Some(items) = ck.array("objects", d) {
                    for (i, item) in items.iter().enumerate() {
                        let p = format!("objects[{i}]");
                        if let Some(mut o) = ck.object(&p, item) {
                            for key in ["id", "kind", "color", "location"] {
                                if let Some(v) = o.req(ck, key) {
                                    ck.string(&o.child(key), v);
                                }
                            }
                            if let Some(v) = o.opt("label") {
                                ck.string(&o.child("label"), v);
                            }
                            ck.close(o);
                        }
                    }
                }
            }
            if let Some(d) = f.req(ck, "gripper") {
                if let Some(mut g) = ck.object("gripper", d) {
                    if let Some(v) = g.req(ck, "location") {
                        ck.string("gripper.location", v);
                    }
                    if let Some(v) = g.req(ck, "holding") {
                        ck.nullable_string("gripper.holding", v);
                    }
                    if let Some(v) = g.opt("lifted") {
                        ck.boolean("gripper.lifted", v);
                    }
                    ck.close(g);
                }
            }
            if let Some(d) = f.opt("containers") {
                if let Some(items) = ck.array("containers", d) {
                    for (i, item) in items.iter().enumerate() {
                        let p = format!("containers[{i}]");
                        if let Some(mut o) = ck.object(&p, item) {
                            if let Some(v) = o.req(ck, "id") {
                                ck.string(&o.child("id"), v);
                            }
                            if let Some(v) = o.req(ck, "open") {
                                ck.boolean(&o.child("open"), v);
                            }
                            ck.close(o);
                        }
                    }
                }
            }
            if let Some(d) = f.opt("embedding") {
                ck.number_array("embedding", d);
            }
        }),
        PayloadKind::ActionFeedback => simple(name, body, |ck, f| {
            if let Some(d) = f.req(ck, "action") {
                ck.non_empty_string("action", d);
            }
            if let Some(d) = f.req(ck, "success") {
                ck.boolean("success", d);
            }
            if let Some(d) = f.req(ck, "error") {
                ck.nullable_string("error", d);
            }
            if let Some(d) = f.req(ck, "tick") {
                ck.unsigned("tick", d);
            }
        }),
        PayloadKind::ActionHistory => simple(name, body, |ck, f| {
            if let Some(d) = f.req(ck, "actions") {
                ck.string_array("actions", d);
            }
        }),
        PayloadKind::IntermediateText => simple(name, body, |ck, f| {
            if let Some(d) = f.req(ck, "text") {
                ck.string("text", d);
            }
        }),
    }
}

fn simple(name: &str, body: &Document, check: impl FnOnce(&mut Checker, &mut Fields<'_>)) -> Result<(), SchemaViolation> {
    let mut ck = Checker::new();
    if let Some(mut f) = ck.object("", body) {
        check(&mut ck, &mut f);
        ck.close(f);
    }
    ck.finish(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(json: &str) -> Document {
        Document::from_json(&serde_json::from_str(json).unwrap())
    }

    #[test]
    fn reports_every_problem_at_once() {
        let body = doc(r#"{"action": 3, "success": true, "bogus": 1}"#);
        let err = validate_schema(PayloadKind::ActionFeedback, &body, &Schemas::default()).unwrap_err();
        assert!(err.mentions("action"));
        assert!(err.mentions("error"));
        assert!(err.mentions("tick"));
        assert!(err.mentions("bogus"));
        assert_eq!(err.violations.len(), 4);
    }

    #[test]
    fn example_command_payload_is_accepted() {
        let body =
            doc(r#"{"goal": "inspect_zone_B3", "sensors": {"camera": "object_detected", "lidar": "clear"}, "feedback": null}"#);
        validate_schema(PayloadKind::HighLevelCommand, &body, &Schemas::default()).unwrap();
    }

    #[test]
    fn unrecognised_agent_response_shape() {
        let err = validate_schema(PayloadKind::AgentResponse, &doc(r#"{"x": 1}"#), &Schemas::default()).unwrap_err();
        assert_eq!(err.kind, "AgentResponse");
    }

    #[test]
    fn memory_snapshot_body() {
        let ok = doc(r#"{"memory": [0.5, -1.0], "tick": 1000}"#);
        validate_schema(PayloadKind::HtnMemory, &ok, &Schemas::default()).unwrap();
        let bad = doc(r#"{"memory": [0.5, "x"], "tick": -1}"#);
        let err = validate_schema(PayloadKind::HtnMemory, &bad, &Schemas::default()).unwrap_err();
        assert!(err.mentions("memory[1]") && err.mentions("tick"));
    }
}
