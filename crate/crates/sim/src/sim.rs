//! Stepping the world: action execution over reactive ticks, scheduled
//! events and outcome sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cortex_core::protocol::Document;

use crate::action::{apply_success, precondition_failure, semantic_failure, Action, SimError};
use crate::goal::Goal;
use crate::observe::{observe, Observation};
use crate::scenario::{ScenarioSpec, ScheduledEvent, TransitionTable, WorldEvent};
use crate::world::WorldState;

#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub action: String,
    pub success: bool,
    pub error: Option<String>,
    pub tick: u64,
}

impl Feedback {
    /// `ActionFeedback` payload body.
    pub fn to_document(&self) -> Document {
        Document::object([
            ("action", Document::from(self.action.as_str())),
            ("success", Document::from(self.success)),
            ("error", Document::from(self.error.clone())),
            ("tick", Document::from(self.tick)),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    Fired(ScheduledEvent),
    Feedback(Feedback),
}

/// Resolve `action` against `state` in one shot: check preconditions, draw
/// the outcome from `table`, and apply it. Illegal actions leave the state
/// unchanged and report failure.
pub fn step(
    state: &WorldState,
    action: &Action,
    table: &TransitionTable,
    rng: &mut impl Rng,
) -> (WorldState, Observation, Vec<SimEvent>) {
    let mut next = state.clone();
    let fb = resolve(&mut next, action, table, rng);
    let obs = observe(&next);
    (next, obs, vec![SimEvent::Feedback(fb)])
}

fn resolve(world: &mut WorldState, action: &Action, table: &TransitionTable, rng: &mut impl Rng) -> Feedback {
    let fail = |e: String, tick| Feedback { action: action.to_string(), success: false, error: Some(e), tick };
    if let Some(e) = precondition_failure(world, action) {
        return fail(e, world.tick);
    }
    if let Some(e) = semantic_failure(world, action) {
        return fail(e, world.tick);
    }
    let p = table.get(action.kind()).success;
    if !rng.random_bool(p.clamp(0.0, 1.0)) {
        return fail(format!("{} slipped", action.kind().as_str()), world.tick);
    }
    apply_success(world, action);
    Feedback { action: action.to_string(), success: true, error: None, tick: world.tick }
}

/// Fire every event scheduled for exactly `world.tick`.
pub fn fire_events(world: &mut WorldState, events: &[ScheduledEvent]) -> Vec<ScheduledEvent> {
    let mut fired = Vec::new();
    for e in events.iter().filter(|e| e.tick == world.tick) {
        match &e.event {
            WorldEvent::Remove { object } => {
                if let Some(o) = world.objects.get_mut(object) {
                    o.present = false;
                    if world.gripper.holding.as_deref() == Some(object.as_str()) {
                        world.gripper.holding = None;
                        world.gripper.lifted = false;
                    }
                }
            }
        }
        fired.push(e.clone());
    }
    fired
}

pub fn check_success(world: &WorldState, goal: &Goal) -> bool {
    goal.holds(world)
}

/// Recompute occlusion from a new viewpoint. Positions never change.
pub fn viewpoint_change(world: &WorldState, direction: &str) -> WorldState {
    let mut w = world.clone();
    w.viewpoint = direction.to_owned();
    w.refresh_occlusion();
    w
}

#[derive(Debug, Clone, PartialEq)]
struct Execution {
    action: Action,
    dwell_left: u64,
    arrived: bool,
}

/// A running scenario. Each call to [`Simulator::tick`] is one reactive
/// tick.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: ScenarioSpec,
    world: WorldState,
    rng: ChaCha8Rng,
    current: Option<Execution>,
}

impl Simulator {
    pub fn new(spec: ScenarioSpec) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed_5eed_5eed);
        let world = spec.world.clone();
        Self { spec, world, rng, current: None }
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn tick_now(&self) -> u64 {
        self.world.tick
    }

    pub fn observe(&self) -> Observation {
        observe(&self.world)
    }

    pub fn is_success(&self) -> bool {
        check_success(&self.world, &self.spec.goal)
    }

    pub fn busy(&self) -> bool {
        self.current.is_some()
    }

    pub fn current_action(&self) -> Option<&Action> {
        self.current.as_ref().map(|c| &c.action)
    }

    /// Start executing `action`. Illegal or unknown actions resolve at once
    /// with failure feedback.
    pub fn begin(&mut self, action: &str) -> Result<Option<Feedback>, SimError> {
        if !self.spec.action_vocab.iter().any(|a| a == action) {
            return Err(SimError::NotInVocabulary(action.to_owned()));
        }
        let parsed: Action = action.parse()?;
        if let Some(e) = precondition_failure(&self.world, &parsed) {
            return Ok(Some(Feedback { action: action.to_owned(), success: false, error: Some(e), tick: self.world.tick }));
        }
        let (lo, hi) = self.spec.transitions.get(parsed.kind()).dwell;
        let dwell_left = self.rng.random_range(lo..=hi.max(lo));
        let arrived = parsed.destination().is_none();
        if !arrived {
            self.world.gripper.location = None;
        }
        self.current = Some(Execution { action: parsed, dwell_left, arrived });
        Ok(None)
    }

    /// Velocity the gripper would need this tick to head for the current
    /// move target, if one is active.
    pub fn motion_target(&self) -> Option<(f64, f64)> {
        self.current.as_ref().filter(|c| !c.arrived).and_then(|c| c.action.destination())
    }

    /// Advance one tick with velocity command `u` (ignored unless moving).
    pub fn tick(&mut self, u: Option<(f64, f64)>) -> Vec<SimEvent> {
        self.world.tick += 1;
        let mut out: Vec<SimEvent> = fire_events(&mut self.world, &self.spec.events).into_iter().map(SimEvent::Fired).collect();
        if !out.is_empty() {
            self.world.refresh_occlusion();
        }
        let Some(mut exec) = self.current.take() else { return out };
        if !exec.arrived {
            let (tx, ty) = exec.action.destination().expect("moves have a destination");
            let (x, y) = self.world.gripper.position;
            let (dx, dy) = u.unwrap_or(((tx - x).clamp(-1.0, 1.0), (ty - y).clamp(-1.0, 1.0)));
            self.world.gripper.position = (x + dx, y + dy);
            let (x, y) = self.world.gripper.position;
            if (tx - x).abs() <= 0.5 && (ty - y).abs() <= 0.5 {
                exec.arrived = true;
            }
            self.current = Some(exec);
            return out;
        }
        if exec.dwell_left > 1 {
            exec.dwell_left -= 1;
            self.current = Some(exec);
            return out;
        }
        let table = self.spec.transitions.clone();
        if let Action::MoveTo(l) = &exec.action {
            // the travel already happened; arrival always succeeds
            self.world.gripper.location = Some(l.clone());
            self.world.gripper.position = crate::world::location_xy(l).expect("known");
            out.push(SimEvent::Feedback(Feedback {
                action: exec.action.to_string(),
                success: true,
                error: None,
                tick: self.world.tick,
            }));
            return out;
        }
        let fb = resolve(&mut self.world, &exec.action, &table, &mut self.rng);
        out.push(SimEvent::Feedback(fb));
        out
    }

    /// Abandon the running action (the gripper stays where it is).
    pub fn cancel(&mut self) {
        if let Some(exec) = self.current.take() {
            if let Action::MoveTo(_) = exec.action {
                self.world.gripper.location = nearest_named(self.world.gripper.position);
            }
        }
    }
}

fn nearest_named(pos: (f64, f64)) -> Option<String> {
    crate::world::LOCATIONS
        .iter()
        .filter_map(|l| crate::world::location_xy(l).map(|p| (l, p)))
        .find(|(_, p)| (p.0 - pos.0).abs() <= 0.5 && (p.1 - pos.1).abs() <= 0.5)
        .map(|(l, _)| l.to_string())
}
