//! Role agents: the leader that grades and splits missions, workers that
//! reflect on their subtask and serve colleagues, and the motor agent that
//! turns the plan frontier into concrete actions.

use std::sync::Arc;

use thiserror::Error;

use super::backend::{leader_prompt, provider_prompt, worker_prompt, BackendError, CompletionBackend};
use super::contracts::{
    parse_contract_text, CollaborationDecision, DecompositionPlan, ProviderRequest, ProviderResponse, SubtaskAssignment,
};
use crate::embed::FeatureHasher;
use crate::protocol::{AgentId, SchemaViolation};
use crate::registry::{AgentDescriptor, Registry, RegistryError, Role};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
    #[error(transparent)]
    Assignment(#[from] RegistryError),
    #[error("collaboration request names unknown colleague {0}")]
    UnknownWorker(String),
    #[error("no executable node on the plan frontier")]
    NoExecutableNode,
}

/// The leader, inspector, planner and five skill-tagged workers used by the
/// examples and the benchmark.
pub fn default_roster() -> Vec<AgentDescriptor> {
    let none = Vec::<String>::new;
    vec![
        AgentDescriptor::new("Leader", Role::Leader, none()),
        AgentDescriptor::new("Inspector", Role::Inspector, none()),
        AgentDescriptor::new("Planner", Role::Planner, none()),
        AgentDescriptor::new("Worker_1", Role::Worker, ["data validation", "accuracy", "verification", "inspection"]),
        AgentDescriptor::new("Worker_2", Role::Worker, ["creativity", "brand alignment", "market analysis", "language"]),
        AgentDescriptor::new("Worker_3", Role::Worker, ["navigation", "mapping", "exploration", "reporting"]),
        AgentDescriptor::new("Worker_4", Role::Worker, ["grasping", "manipulation", "containers", "assembly"]),
        AgentDescriptor::new("Worker_5", Role::Worker, ["perception", "object recognition", "viewpoint", "occlusion"]),
    ]
}

/// Skill table of every registered worker and provider.
pub fn expertise_table(registry: &Registry) -> Vec<(String, Vec<String>)> {
    registry
        .agents()
        .into_iter()
        .filter(|d| matches!(d.role, Role::Worker | Role::Provider))
        .map(|d| (d.agent_id.to_string(), d.expertise))
        .collect()
}

/// Leader output: the numeric plan vector and the symbolic decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub vector: Vec<f64>,
    pub plan: DecompositionPlan,
    pub text: String,
}

/// Unit-norm bag-of-words embedding of a decomposition.
pub fn embed_plan(hasher: &FeatureHasher, plan: &DecompositionPlan) -> Vec<f64> {
    let mut text = format!("difficulty {}", plan.difficulty);
    for st in &plan.subtasks {
        text.push(' ');
        text.push_str(&st.task_description);
        for f in &st.focus {
            text.push(' ');
            text.push_str(f);
        }
    }
    hasher.text(&text)
}

pub struct Leader {
    pub id: AgentId,
    backend: Arc<dyn CompletionBackend>,
    hasher: FeatureHasher,
}

impl Leader {
    pub fn new(id: AgentId, backend: Arc<dyn CompletionBackend>, plan_dim: usize) -> Self {
        Self { id, backend, hasher: FeatureHasher::new(plan_dim) }
    }

    /// Ask the backend for a decomposition, validate it against the
    /// contract and the registry, and embed it.
    pub fn pfp_plan(&self, mission: &str, registry: &Registry) -> Result<PlanOutput, AgentError> {
        let prompt = leader_prompt(mission, &expertise_table(registry));
        let text = self.backend.complete(&prompt)?;
        let plan = DecompositionPlan::from_document(&parse_contract_text("DecompositionPlan", &text)?)?;
        registry.validate_assignment(&plan)?;
        Ok(PlanOutput { vector: embed_plan(&self.hasher, &plan), plan, text })
    }
}

pub struct WorkerAgent {
    pub id: AgentId,
    pub skills: Vec<String>,
    backend: Arc<dyn CompletionBackend>,
}

impl WorkerAgent {
    pub fn new(id: AgentId, skills: Vec<String>, backend: Arc<dyn CompletionBackend>) -> Self {
        Self { id, skills, backend }
    }

    /// Decide whether colleagues are needed for `subtask`. Every colleague
    /// named in the answer must appear in `colleagues`.
    pub fn worker_reflect(
        &self,
        subtask: &SubtaskAssignment,
        colleagues: &[(String, Vec<String>)],
    ) -> Result<CollaborationDecision, AgentError> {
        let others: Vec<(String, Vec<String>)> = colleagues.iter().filter(|(id, _)| id != self.id.as_str()).cloned().collect();
        let mut doc = subtask.to_document();
        if let crate::protocol::Document::Object(map) = &mut doc {
            map.remove("assigned_worker");
            map.remove("depends_on");
        }
        let prompt = worker_prompt(&doc, &self.skills, &others);
        let text = self.backend.complete(&prompt)?;
        let decision = CollaborationDecision::from_document(&parse_contract_text("CollaborationDecision", &text)?)?;
        if let Some(r) = decision.requirement.iter().find(|r| !colleagues.iter().any(|(id, _)| *id == r.worker_id)) {
            return Err(AgentError::UnknownWorker(r.worker_id.clone()));
        }
        Ok(decision)
    }

    /// Serve a colleague's collaboration request.
    pub fn provider_execute(&self, request: &ProviderRequest) -> Result<ProviderResponse, AgentError> {
        let prompt = provider_prompt(&request.to_document(), &self.skills);
        let text = self.backend.complete(&prompt)?;
        Ok(ProviderResponse::from_document(&parse_contract_text("ProviderResponse", &text)?)?)
    }
}

/// An action the motor agent has committed to, identified so that repeated
/// calls during execution can be recognised as the same action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionProposal {
    pub id: u64,
    pub action: String,
}

/// Maps the plan frontier to concrete actions, holding each action until
/// its completion is reported.
#[derive(Debug, Default)]
pub struct MotorAgent {
    in_progress: Option<ActionProposal>,
    issued: u64,
}

impl MotorAgent {
    pub fn new() -> Self {
        Self::default()
    }

    /// The in-progress action if there is one, otherwise the first frontier
    /// node that is in `vocab` (or any node when `vocab` is empty).
    pub fn ma_act(&mut self, frontier: &[String], vocab: &[String]) -> Result<ActionProposal, AgentError> {
        if let Some(current) = &self.in_progress {
            return Ok(current.clone());
        }
        let action = frontier.iter().find(|a| vocab.is_empty() || vocab.contains(a)).ok_or(AgentError::NoExecutableNode)?;
        self.issued += 1;
        let proposal = ActionProposal { id: self.issued, action: action.clone() };
        self.in_progress = Some(proposal.clone());
        Ok(proposal)
    }

    pub fn in_progress(&self) -> Option<&ActionProposal> {
        self.in_progress.as_ref()
    }

    /// Feedback arrived for the current action; the next call picks anew.
    pub fn complete(&mut self) -> Option<ActionProposal> {
        self.in_progress.take()
    }

    pub fn reset(&mut self) {
        self.in_progress = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::backend::ScriptedBackend;
    use crate::agents::contracts::Difficulty;

    fn setup() -> (Registry, Arc<dyn CompletionBackend>) {
        let reg = Registry::new();
        reg.register_all(default_roster()).unwrap();
        (reg, Arc::new(ScriptedBackend::builtin()))
    }

    #[test]
    fn leader_grades_example_missions() {
        let (reg, backend) = setup();
        let leader = Leader::new(AgentId::from("Leader"), backend, 16);
        assert_eq!(leader.pfp_plan("walk to the desk", &reg).unwrap().plan.difficulty, Difficulty::Low);
        assert_eq!(leader.pfp_plan("fetch an apple on the desk", &reg).unwrap().plan.difficulty, Difficulty::Medium);
        let high = leader.pfp_plan("make a chicken sandwich in the kitchen", &reg).unwrap();
        assert_eq!(high.plan.difficulty, Difficulty::High);
        assert!(high.plan.subtasks.len() >= 2);
        assert!((crate::linalg::norm2(&high.vector) - 1.0).abs() < 1e-12);
        assert!(matches!(leader.pfp_plan("unscripted", &reg), Err(AgentError::Backend(BackendError::NoScript { .. }))));
    }

    #[test]
    fn worker_requests_validation_help() {
        let (reg, backend) = setup();
        let leader = Leader::new(AgentId::from("Leader"), backend.clone(), 16);
        let plan = leader.pfp_plan("compile the quarterly sales report", &reg).unwrap().plan;
        let st = &plan.subtasks[0];
        let worker = WorkerAgent::new(AgentId::from("Worker_3"), vec!["reporting".into()], backend.clone());
        let decision = worker.worker_reflect(st, &expertise_table(&reg)).unwrap();
        assert!(decision.collaboration_required);
        assert_eq!(decision.requirement[0].worker_id, "Worker_1");
        assert_eq!(decision.requirement[0].request_detail, "Validate the accuracy of sales growth metrics in the dataset.");

        let solo = worker.worker_reflect(&plan.subtasks[1], &expertise_table(&reg)).unwrap();
        assert_eq!(solo, CollaborationDecision::none());

        let few: Vec<_> = expertise_table(&reg).into_iter().filter(|(id, _)| id != "Worker_1").collect();
        assert!(matches!(worker.worker_reflect(st, &few), Err(AgentError::UnknownWorker(w)) if w == "Worker_1"));
    }

    #[test]
    fn provider_answers_significance_request() {
        let (_, backend) = setup();
        let provider = WorkerAgent::new(AgentId::from("Worker_1"), vec!["data validation".into()], backend);
        let req = ProviderRequest {
            request_id: "0001".into(),
            requester_id: "Worker_1".into(),
            request_detail: "Verify statistical significance (p<0.05) in dataset A/B groups".into(),
        };
        let a = provider.provider_execute(&req).unwrap();
        assert!(a.response.contains("p=0.032 < 0.05"));
        assert_eq!(a, provider.provider_execute(&req).unwrap());
    }

    #[test]
    fn motor_agent_holds_action_until_feedback() {
        let mut ma = MotorAgent::new();
        let frontier = vec!["grasp cube".to_owned()];
        assert!(matches!(ma.ma_act(&[], &[]), Err(AgentError::NoExecutableNode)));
        let a = ma.ma_act(&frontier, &[]).unwrap();
        assert_eq!(a.action, "grasp cube");
        assert_eq!(ma.ma_act(&["lift".to_owned()], &[]).unwrap(), a);
        ma.complete();
        assert_eq!(ma.ma_act(&["lift".to_owned()], &[]).unwrap().action, "lift");
    }
}
