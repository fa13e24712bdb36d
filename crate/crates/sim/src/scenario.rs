//! The eight benchmark scenarios and their stochastic transition tables.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionKind, SimError};
use crate::goal::{Goal, ObjRef};
use crate::world::{Object, WorldState};

/// Reactive ticks per virtual second.
pub const TICKS_PER_SECOND: u64 = 100;
/// Default removal time for the dynamic-deletion task.
pub const DELETION_TICK: u64 = 60 * TICKS_PER_SECOND;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Probability that an attempt whose preconditions hold succeeds.
    pub success: f64,
    /// Inclusive range of ticks spent at the target before resolving.
    pub dwell: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub outcomes: BTreeMap<String, Outcome>,
}

impl TransitionTable {
    pub fn get(&self, kind: ActionKind) -> Outcome {
        self.outcomes.get(kind.as_str()).copied().unwrap_or(Outcome { success: 1.0, dwell: (1, 1) })
    }

    pub fn set(&mut self, kind: ActionKind, success: f64, dwell: (u64, u64)) {
        self.outcomes.insert(kind.as_str().into(), Outcome { success, dwell });
    }
}

impl Default for TransitionTable {
    fn default() -> Self {
        let mut t = TransitionTable { outcomes: BTreeMap::new() };
        t.set(ActionKind::Move, 1.0, (100, 100));
        t.set(ActionKind::Open, 0.95, (600, 800));
        t.set(ActionKind::Close, 0.95, (500, 600));
        t.set(ActionKind::Grasp, 0.85, (800, 1100));
        t.set(ActionKind::Lift, 0.98, (500, 600));
        t.set(ActionKind::Place, 0.95, (800, 1000));
        t.set(ActionKind::Look, 1.0, (400, 500));
        t.set(ActionKind::Plug, 0.5, (900, 1200));
        t.set(ActionKind::NoOp, 1.0, (1, 1));
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorldEvent {
    Remove { object: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub tick: u64,
    pub event: WorldEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub task_id: u8,
    pub category: String,
    pub mission: String,
    pub world: WorldState,
    pub goal: Goal,
    pub events: Vec<ScheduledEvent>,
    pub action_vocab: Vec<String>,
    pub transitions: TransitionTable,
    /// Free-text sensor channels delivered with the mission.
    #[serde(default)]
    pub sensors: BTreeMap<String, String>,
    pub timeout_ticks: u64,
    pub seed: u64,
}

pub const CATEGORIES: [&str; 8] =
    ["physical", "visual", "semantic", "correction", "ood", "multimodal", "long-horizon1", "long-horizon2"];

pub const MISSIONS: [&str; 8] = [
    "grab cube from cabinet",
    "grab the blue cube",
    "lift blue cube",
    "try and plug the right charger",
    "grab the harry potter book",
    "find and fetch the apple",
    "fetch the apple (occlusion)",
    "fetch the apple (dynamic deletion)",
];

impl ScenarioSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        if !(1..=8).contains(&spec.task_id) {
            return Err(SimError::UnknownTask(spec.task_id));
        }
        for a in &spec.action_vocab {
            a.parse::<Action>()?;
        }
        Ok(spec)
    }

    pub fn vocab(&self) -> Vec<Action> {
        self.action_vocab.iter().filter_map(|a| a.parse().ok()).collect()
    }

    pub fn with_deletion_at(mut self, tick: u64) -> Self {
        for e in &mut self.events {
            e.tick = tick;
        }
        self
    }
}

fn vocab_for(world: &WorldState) -> Vec<String> {
    let mut v = vec!["lift".to_owned(), "no_op".to_owned()];
    for l in crate::world::LOCATIONS {
        v.push(format!("move to {l}"));
        v.push(format!("place at {l}"));
    }
    for c in world.containers.keys() {
        v.push(format!("open {c}"));
        v.push(format!("close {c}"));
    }
    for (id, o) in &world.objects {
        if o.kind == "socket" {
            v.push(format!("plug into {id}"));
        } else if o.kind != "box" {
            v.push(format!("grasp {id}"));
        }
    }
    for view in crate::world::VIEWS {
        v.push(format!("look from {view}"));
    }
    v.sort();
    v
}

/// Build scenario `task_id` (1..=8). Identical arguments give identical specs.
pub fn load_scenario(task_id: u8, seed: u64) -> Result<ScenarioSpec, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(task_id));
    let mut sensors = BTreeMap::new();
    let mut events = Vec::new();
    let mut timeout = 20_000;
    let (world, goal) = match task_id {
        1 => {
            let w = WorldState::new("user")
                .with_container("cabinet", "cabinet", false)
                .with_container("drawer", "drawer", false)
                .with_object("cube", Object::new("cube", "cabinet").colored("red").inside("cabinet"));
            (w, Goal::Lifted(ObjRef::Id("cube".into())))
        }
        2 | 3 => {
            let mut colors = ["red", "green", "blue"];
            // shuffle which surface holds which cube
            for i in (1..colors.len()).rev() {
                colors.swap(i, rng.random_range(0..=i));
            }
            let places = ["table", "table", "shelf"];
            let mut w = WorldState::new("user");
            for (c, p) in colors.iter().zip(places) {
                w = w.with_object(&format!("{c}_cube"), Object::new("cube", p).colored(c));
            }
            let target = ObjRef::Id("blue_cube".into());
            (w, if task_id == 2 { Goal::Holding(target) } else { Goal::Lifted(target) })
        }
        4 => {
            let w = WorldState::new("user")
                .with_object("charger_left", Object::new("charger", "table").colored("white").connector("usb-c"))
                .with_object("charger_right", Object::new("charger", "table").colored("black").connector("lightning"))
                .with_object("socket_1", Object::new("socket", "socket").connector("usb-c"));
            (w, Goal::Plugged(ObjRef::Kind("charger".into()), "socket_1".into()))
        }
        5 => {
            // Four spines look alike; only the drawn slot holds the target
            // title, and its label rarely faces the camera.
            let target = rng.random_range(0..4);
            let label_visible = rng.random_bool(0.1);
            let mut w = WorldState::new("user");
            for (i, color) in ["red", "green", "blue", "brown"].iter().enumerate() {
                let mut b = Object::new("book", "shelf").colored(color);
                if i == target && label_visible {
                    b = b.labelled("harry potter");
                }
                w = w.with_object(&format!("book_{}", i + 1), b);
            }
            (w, Goal::Holding(ObjRef::Id(format!("book_{}", target + 1))))
        }
        6 => {
            let in_drawer = rng.random_bool(0.5);
            let (here, other) = if in_drawer { ("drawer", "cabinet") } else { ("cabinet", "drawer") };
            let honest = rng.random_bool(0.8);
            let hinted = if honest { here } else { other };
            sensors.insert("audio".into(), format!("something rolled inside the {hinted}"));
            let w = WorldState::new("user")
                .with_container("cabinet", "cabinet", false)
                .with_container("drawer", "drawer", false)
                .with_object("apple", Object::new("apple", here).colored("red").inside(here));
            (w, Goal::Delivered(ObjRef::Kind("apple".into()), "user".into()))
        }
        7 => {
            let hidden: &[&str] = if rng.random_bool(0.3) { &["front", "left"] } else { &["front"] };
            let w = WorldState::new("user")
                .with_object("box", Object::new("box", "table").colored("brown"))
                .with_object("apple", Object::new("apple", "table").colored("red").hidden_from(hidden));
            (w, Goal::Delivered(ObjRef::Kind("apple".into()), "user".into()))
        }
        8 => {
            timeout = 30_000;
            let mut w = WorldState::new("user")
                .with_container("cabinet", "cabinet", false)
                .with_object("apple_1", Object::new("apple", "counter").colored("red"));
            if rng.random_bool(0.75) {
                w = w.with_object("apple_2", Object::new("apple", "cabinet").colored("green").inside("cabinet"));
            }
            events.push(ScheduledEvent { tick: DELETION_TICK, event: WorldEvent::Remove { object: "apple_1".into() } });
            (w, Goal::Delivered(ObjRef::Kind("apple".into()), "user".into()))
        }
        other => return Err(SimError::UnknownTask(other)),
    };
    let mut transitions = TransitionTable::default();
    if task_id == 8 {
        // Long walks keep nominal completion near 64 s, past the deletion.
        transitions.set(ActionKind::Move, 1.0, (250, 300));
    }
    let idx = usize::from(task_id - 1);
    Ok(ScenarioSpec {
        task_id,
        category: CATEGORIES[idx].into(),
        mission: MISSIONS[idx].into(),
        action_vocab: vocab_for(&world),
        world,
        goal,
        events,
        transitions,
        sensors,
        timeout_ticks: timeout,
        seed,
    })
}
