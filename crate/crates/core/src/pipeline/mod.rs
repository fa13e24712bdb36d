//! Multi-rate execution core: latent relay, state review, scheduling and
//! difficulty routing.

mod latent;
mod scheduler;

pub use latent::{
    pipeline_update, review_and_notify, state_review, LatentState, Relay, ReviewDecision, ReviewError, ReviewVerdict,
    REVIEW_THRESHOLD,
};
pub use scheduler::{
    run_scheduler, ExecutionMode, ExecutionTrace, IdleLoops, Job, LoopKind, Loops, RateConfig, RateError, Scheduler, TraceEvent,
    TraceRecord,
};

use crate::agents::contracts::{DecompositionPlan, Difficulty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Leader,
    Worker,
    Inspector,
    Planner,
}

/// Ordered stages a mission passes through before an action is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pathway {
    pub stages: Vec<Stage>,
}

impl Pathway {
    pub fn for_difficulty(d: Difficulty) -> Self {
        let stages = match d {
            Difficulty::Low => vec![Stage::Leader, Stage::Planner],
            Difficulty::Medium => vec![Stage::Leader, Stage::Inspector, Stage::Planner],
            Difficulty::High => vec![Stage::Leader, Stage::Worker, Stage::Inspector, Stage::Planner],
        };
        Self { stages }
    }

    /// Memory-driven shortcut that skips planning entirely.
    pub fn reflex() -> Self {
        Self { stages: Vec::new() }
    }

    pub fn includes(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn label(&self) -> String {
        let mut parts: Vec<&str> = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::Leader => "Leader",
                Stage::Worker => "Worker",
                Stage::Inspector => "Inspector",
                Stage::Planner => "Planner",
            })
            .collect();
        parts.push("<action>");
        parts.join("-")
    }
}

pub fn route_by_difficulty(plan: &DecompositionPlan) -> Pathway {
    Pathway::for_difficulty(plan.difficulty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathway_labels() {
        assert_eq!(Pathway::for_difficulty(Difficulty::Low).label(), "Leader-Planner-<action>");
        assert_eq!(Pathway::for_difficulty(Difficulty::High).label(), "Leader-Worker-Inspector-Planner-<action>");
        assert_eq!(Pathway::for_difficulty(Difficulty::Medium).stages.len(), 3);
        assert!(!Pathway::reflex().includes(Stage::Leader));
    }
}
