//! A small deterministic manipulation world: cubes, chargers, books and
//! apples on named surfaces and in containers, with occlusion, scheduled
//! removals and stochastic action outcomes.

pub mod action;
pub mod goal;
pub mod observe;
pub mod planning;
pub mod scenario;
pub mod sim;
pub mod world;

pub use action::{Action, ActionKind, SimError};
pub use goal::{phrase_vocabulary, Goal, ObjRef};
pub use observe::{observe, Observation, SeenObject};
pub use planning::{Belief, PlanningModel};
pub use scenario::{load_scenario, ScenarioSpec, ScheduledEvent, TransitionTable, WorldEvent, DELETION_TICK, TICKS_PER_SECOND};
pub use sim::{check_success, fire_events, step, viewpoint_change, Feedback, SimEvent, Simulator};
pub use world::{Object, WorldState};
