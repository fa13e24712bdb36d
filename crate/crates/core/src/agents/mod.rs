//! Deliberative agents: role contracts over a completion backend and the
//! numeric couplings that tie agent outputs together.

pub mod backend;
pub mod contracts;
pub mod numeric;
pub mod roles;

pub use backend::{BackendError, CompletionBackend, Prompt, PromptRole, RemoteBackend, RemoteConfig, ScriptedBackend};
pub use contracts::{
    CollaborationDecision, CollaborationRequest, DecompositionPlan, Difficulty, ProviderRequest, ProviderResponse,
    SubtaskAssignment,
};
pub use numeric::{
    combine_outputs, ia_inspect, pa_fuse, sa_interpret, AgentContext, AgentOutput, ConnectivityMatrix, Inspection,
    PerceptionFusion, Verdict,
};
pub use roles::{default_roster, AgentError, Leader, MotorAgent, PlanOutput, WorkerAgent};
