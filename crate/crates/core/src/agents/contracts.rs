//! Structured documents exchanged by the leader, worker and provider roles.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::protocol::schema::{Checker, Problem, SchemaViolation};
use crate::protocol::Document;

const PLAN: &str = "DecompositionPlan";
const COLLAB: &str = "CollaborationDecision";
const PROVIDER: &str = "ProviderResponse";

/// Words a subtask description must not lean on.
const VAGUE_TERMS: [&str; 2] = ["assist", "help"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Low,
    Medium,
    High,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Low => "low",
            Difficulty::Medium => "medium",
            Difficulty::High => "high",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Difficulty::Low),
            "medium" => Ok(Difficulty::Medium),
            "high" => Ok(Difficulty::High),
            other => Err(format!("difficulty must be low, medium or high, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtaskAssignment {
    pub subtask_id: String,
    pub assigned_worker: String,
    pub task_description: String,
    pub focus: Vec<String>,
    /// Subtask ids that must finish first. `None` means "after the previous
    /// subtask in id order".
    pub depends_on: Option<Vec<String>>,
}

impl SubtaskAssignment {
    pub fn to_document(&self) -> Document {
        let mut entries = vec![
            ("subtask_id", Document::from(self.subtask_id.as_str())),
            ("assigned_worker", Document::from(self.assigned_worker.as_str())),
            ("task_description", Document::from(self.task_description.as_str())),
            ("focus", Document::strings(&self.focus)),
        ];
        if let Some(deps) = &self.depends_on {
            entries.push(("depends_on", Document::strings(deps)));
        }
        Document::object(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionPlan {
    pub difficulty: Difficulty,
    pub subtasks: Vec<SubtaskAssignment>,
}

impl DecompositionPlan {
    pub fn to_document(&self) -> Document {
        Document::object([
            ("difficulty", Document::from(self.difficulty.as_str())),
            ("subtasks", Document::Array(self.subtasks.iter().map(SubtaskAssignment::to_document).collect())),
        ])
    }

    pub fn from_document(doc: &Document) -> Result<Self, SchemaViolation> {
        let mut ck = Checker::new();
        let mut difficulty = None;
        let mut subtasks = Vec::new();
        if let Some(mut f) = ck.object("", doc) {
            if let Some(d) = f.req(&mut ck, "difficulty") {
                if let Some(s) = ck.string("difficulty", d) {
                    match s.parse::<Difficulty>() {
                        Ok(v) => difficulty = Some(v),
                        Err(msg) => ck.invalid("difficulty", msg),
                    }
                }
            }
            if let Some(d) = f.req(&mut ck, "subtasks") {
                if let Some(items) = ck.array("subtasks", d) {
                    for (i, item) in items.iter().enumerate() {
                        if let Some(st) = parse_subtask(&mut ck, &format!("subtasks[{i}]"), item) {
                            subtasks.push(st);
                        }
                    }
                    check_subtask_set(&mut ck, &subtasks, difficulty);
                }
            }
            ck.close(f);
        }
        ck.finish(PLAN)?;
        Ok(Self { difficulty: difficulty.expect("checked"), subtasks })
    }
}

fn parse_subtask(ck: &mut Checker, path: &str, doc: &Document) -> Option<SubtaskAssignment> {
    let mut f = ck.object(path, doc)?;
    let mut ok = true;
    let mut text = |ck: &mut Checker, f: &mut crate::protocol::schema::Fields<'_>, key: &str| {
        let v = f.req(ck, key).and_then(|d| ck.non_empty_string(&f.child(key), d)).map(str::to_owned);
        ok &= v.is_some();
        v.unwrap_or_default()
    };
    let subtask_id = text(ck, &mut f, "subtask_id");
    let assigned_worker = text(ck, &mut f, "assigned_worker");
    let task_description = text(ck, &mut f, "task_description");
    let focus = match f.req(ck, "focus").and_then(|d| ck.string_array(&f.child("focus"), d)) {
        Some(focus) if (3..=5).contains(&focus.len()) => focus,
        Some(focus) => {
            ck.invalid(f.child("focus"), format!("needs 3 to 5 keywords, got {}", focus.len()));
            ok = false;
            focus
        }
        None => {
            ok = false;
            Vec::new()
        }
    };
    let lowered = task_description.to_lowercase();
    if lowered.split(|c: char| !c.is_alphanumeric()).any(|w| VAGUE_TERMS.contains(&w)) {
        ck.invalid(f.child("task_description"), "must state a concrete objective, not assist/help");
    }
    let depends_on = match f.opt("depends_on") {
        Some(d) => {
            let deps = ck.string_array(&f.child("depends_on"), d);
            ok &= deps.is_some();
            deps
        }
        None => None,
    };
    ck.close(f);
    ok.then_some(SubtaskAssignment { subtask_id, assigned_worker, task_description, focus, depends_on })
}

fn check_subtask_set(ck: &mut Checker, subtasks: &[SubtaskAssignment], difficulty: Option<Difficulty>) {
    let mut ids = BTreeSet::new();
    let mut workers = BTreeSet::new();
    for (i, st) in subtasks.iter().enumerate() {
        if !ids.insert(st.subtask_id.as_str()) {
            ck.invalid(format!("subtasks[{i}].subtask_id"), format!("duplicate id {:?}", st.subtask_id));
        }
        if !workers.insert(st.assigned_worker.as_str()) {
            ck.invalid(format!("subtasks[{i}].assigned_worker"), format!("{} already has a subtask", st.assigned_worker));
        }
    }
    for (i, st) in subtasks.iter().enumerate() {
        for dep in st.depends_on.iter().flatten() {
            if !ids.contains(dep.as_str()) {
                ck.invalid(format!("subtasks[{i}].depends_on"), format!("unknown subtask {dep:?}"));
            }
        }
    }
    match difficulty {
        Some(Difficulty::High) if subtasks.is_empty() => {
            ck.invalid("subtasks", "a high-difficulty mission must be split into subtasks")
        }
        Some(d @ (Difficulty::Low | Difficulty::Medium)) if subtasks.len() > 1 => {
            ck.invalid("subtasks", format!("a {d} mission carries at most one subtask"))
        }
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollaborationRequest {
    pub request_id: String,
    pub worker_id: String,
    pub request_detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollaborationDecision {
    pub collaboration_required: bool,
    pub requirement: Vec<CollaborationRequest>,
}

impl CollaborationDecision {
    pub fn none() -> Self {
        Self { collaboration_required: false, requirement: Vec::new() }
    }

    pub fn to_document(&self) -> Document {
        Document::object([
            ("collaboration_required", Document::from(self.collaboration_required)),
            (
                "requirement",
                Document::Array(
                    self.requirement
                        .iter()
                        .map(|r| {
                            Document::object([
                                ("request_id", Document::from(r.request_id.as_str())),
                                ("worker_id", Document::from(r.worker_id.as_str())),
                                ("request_detail", Document::from(r.request_detail.as_str())),
                            ])
                        })
                        .collect(),
                ),
            ),
        ])
    }

    /// `requirement` may be omitted when no collaboration is needed.
    pub fn from_document(doc: &Document) -> Result<Self, SchemaViolation> {
        let mut ck = Checker::new();
        let mut required = None;
        let mut requirement = Vec::new();
        if let Some(mut f) = ck.object("", doc) {
            if let Some(d) = f.req(&mut ck, "collaboration_required") {
                required = ck.boolean("collaboration_required", d);
            }
            let req_doc = if required == Some(false) { f.opt("requirement") } else { f.req(&mut ck, "requirement") };
            if let Some(items) = req_doc.and_then(|d| ck.array("requirement", d)) {
                let mut ids = BTreeSet::new();
                for (i, item) in items.iter().enumerate() {
                    let path = format!("requirement[{i}]");
                    let Some(mut r) = ck.object(&path, item) else { continue };
                    let mut get = |ck: &mut Checker, key: &str| {
                        r.req(ck, key).and_then(|d| ck.non_empty_string(&format!("{path}.{key}"), d)).map(str::to_owned)
                    };
                    let (a, b, c) = (get(&mut ck, "request_id"), get(&mut ck, "worker_id"), get(&mut ck, "request_detail"));
                    ck.close(r);
                    if let (Some(request_id), Some(worker_id), Some(request_detail)) = (a, b, c) {
                        if !ids.insert(request_id.clone()) {
                            ck.invalid(format!("{path}.request_id"), format!("duplicate request id {request_id:?}"));
                        }
                        requirement.push(CollaborationRequest { request_id, worker_id, request_detail });
                    }
                }
            }
            match required {
                Some(false) if !requirement.is_empty() => {
                    ck.invalid("requirement", "must be empty when collaboration_required is false")
                }
                Some(true) if req_doc.is_some_and(|d| d.as_array().is_some_and(<[Document]>::is_empty)) => {
                    ck.invalid("requirement", "must list at least one request when collaboration_required is true")
                }
                _ => {}
            }
            ck.close(f);
        }
        ck.finish(COLLAB)?;
        Ok(Self { collaboration_required: required.expect("checked"), requirement })
    }
}

/// What a provider is asked to do on behalf of a colleague.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRequest {
    pub request_id: String,
    pub requester_id: String,
    pub request_detail: String,
}

impl ProviderRequest {
    pub fn to_document(&self) -> Document {
        Document::object([
            ("request_id", Document::from(self.request_id.as_str())),
            ("requester_id", Document::from(self.requester_id.as_str())),
            ("request_detail", Document::from(self.request_detail.as_str())),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    pub response: String,
}

impl ProviderResponse {
    pub fn to_document(&self) -> Document {
        Document::object([("response", Document::from(self.response.as_str()))])
    }

    pub fn from_document(doc: &Document) -> Result<Self, SchemaViolation> {
        let mut ck = Checker::new();
        let mut response = None;
        if let Some(mut f) = ck.object("", doc) {
            if let Some(d) = f.req(&mut ck, "response") {
                response = ck.non_empty_string("response", d).map(str::to_owned);
            }
            ck.close(f);
        }
        ck.finish(PROVIDER)?;
        Ok(Self { response: response.expect("checked") })
    }
}

/// Parse model text into a document. Surrounding prose or a fenced code
/// block around a single JSON object is tolerated.
pub fn parse_contract_text(kind: &str, text: &str) -> Result<Document, SchemaViolation> {
    let trimmed = text.trim();
    let candidate = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(a), Some(b)) if a < b => &trimmed[a..=b],
        _ => trimmed,
    };
    serde_json::from_str(candidate)
        .map(|v| Document::from_json(&v))
        .map_err(|e| SchemaViolation::single(kind, "$", Problem::Invalid(format!("not valid JSON: {e}"))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(json: &str) -> Document {
        parse_contract_text("test", json).unwrap()
    }

    #[test]
    fn leader_example_is_valid() {
        let plan = DecompositionPlan::from_document(&doc(
            r#"{"difficulty": "high", "subtasks": [{"subtask_id": "ST1", "assigned_worker": "Worker_2",
                "task_description": "Generate a marketing slogan for the product.",
                "focus": ["creativity", "brand alignment", "conciseness"]}]}"#,
        ))
        .unwrap();
        assert_eq!(plan.difficulty, Difficulty::High);
        assert_eq!(plan.subtasks[0].assigned_worker, "Worker_2");
        assert_eq!(DecompositionPlan::from_document(&plan.to_document()).unwrap(), plan);
    }

    #[test]
    fn missing_worker_and_short_focus() {
        let err = DecompositionPlan::from_document(&doc(
            r#"{"difficulty": "high", "subtasks": [{"subtask_id": "ST1", "task_description": "x", "focus": ["a"]}]}"#,
        ))
        .unwrap_err();
        assert!(err.mentions("subtasks[0].assigned_worker"));
        assert!(err.mentions("subtasks[0].focus"));
    }

    #[test]
    fn plan_level_rules() {
        let err = DecompositionPlan::from_document(&doc(r#"{"difficulty": "extreme", "subtasks": []}"#)).unwrap_err();
        assert!(err.mentions("difficulty"));
        let err = DecompositionPlan::from_document(&doc(r#"{"difficulty": "high", "subtasks": [
                {"subtask_id": "A", "assigned_worker": "Worker_3", "task_description": "open the drawer", "focus": ["a","b","c"]},
                {"subtask_id": "B", "assigned_worker": "Worker_3", "task_description": "help out", "focus": ["a","b","c"]}]}"#))
        .unwrap_err();
        assert!(err.mentions("subtasks[1].assigned_worker"));
        assert!(err.mentions("subtasks[1].task_description"));
        DecompositionPlan::from_document(&doc(r#"{"difficulty": "low", "subtasks": []}"#)).unwrap();
    }

    #[test]
    fn collaboration_flag_consistency() {
        let d = CollaborationDecision::from_document(&doc(r#"{"collaboration_required": false}"#)).unwrap();
        assert_eq!(d, CollaborationDecision::none());
        let err = CollaborationDecision::from_document(&doc(
            r#"{"collaboration_required": false, "requirement": [{"request_id": "0001", "worker_id": "Worker_1", "request_detail": "x"}]}"#,
        ))
        .unwrap_err();
        assert!(err.mentions("requirement"));
        let err = CollaborationDecision::from_document(&doc(r#"{"collaboration_required": true, "requirement": [
                {"request_id": "0001", "worker_id": "Worker_1", "request_detail": "x"},
                {"request_id": "0001", "worker_id": "Worker_2", "request_detail": "y"}]}"#))
        .unwrap_err();
        assert!(err.mentions("requirement[1].request_id"));
    }

    #[test]
    fn provider_response_must_have_text() {
        assert!(ProviderResponse::from_document(&doc(r#"{"response": ""}"#)).is_err());
        assert!(ProviderResponse::from_document(&doc(r#"{"response": "ok", "extra": 1}"#)).is_err());
        assert_eq!(ProviderResponse::from_document(&doc(r#"{"response": "ok"}"#)).unwrap().response, "ok");
    }

    #[test]
    fn fenced_text_is_accepted() {
        let d = parse_contract_text("x", "```json\n{\"response\": \"fine\"}\n```").unwrap();
        assert_eq!(d.get("response").and_then(Document::as_str), Some("fine"));
        assert!(parse_contract_text("x", "no json here").is_err());
    }
}
