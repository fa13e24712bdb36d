//! Hierarchical planning: plan-to-DAG compilation and bounded
//! state-transition trees with expected-value action selection.

pub mod dag;
pub mod tree;

use thiserror::Error;

use crate::agents::backend::{state_tree_prompt, BackendError, CompletionBackend};
use crate::agents::contracts::parse_contract_text;
use crate::protocol::{Document, SchemaViolation};

pub use dag::{build_htn_dag, DagNode, HtnDag, NodeKind, START_STATE};
pub use tree::{
    action_values, generate_state_tree, score_state, select_action, select_action_with, validate_state_tree, ActionChoice,
    ScoreWeights, StateFactors, StateNode, StateTree, Transition, TransitionModel, DISCOUNT, MAX_LAYERS, NO_OP,
};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("dependency cycle among {0:?}")]
    CycleDetected(Vec<String>),
    #[error("action {0:?} is not in the vocabulary")]
    UnknownAction(String),
    #[error("dependency on unknown subtask {0:?}")]
    UnknownSubtask(String),
    #[error("no actions available")]
    EmptyActionSet,
    #[error(transparent)]
    Schema(#[from] SchemaViolation),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Ask a backend for a state tree and validate its reply.
pub fn generate_state_tree_remote(
    backend: &dyn CompletionBackend,
    task: &str,
    current_state: &str,
    available: &[String],
    observations: &Document,
    htn: &HtnDag,
) -> Result<StateTree, PlannerError> {
    if available.is_empty() {
        return Err(PlannerError::EmptyActionSet);
    }
    let prompt = state_tree_prompt(task, current_state, available, observations, &htn.to_document());
    let text = backend.complete(&prompt)?;
    let vocab = available.iter().cloned().collect();
    Ok(StateTree::from_document(&parse_contract_text("StateTree", &text)?, Some(&vocab))?)
}
