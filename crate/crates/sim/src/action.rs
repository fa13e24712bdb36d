//! Primitive actions, their preconditions and deterministic effects.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::world::{location_xy, WorldState, VIEWS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown task {0}; tasks are numbered 1 to 8")]
    UnknownTask(u8),
    #[error("cannot parse action {0:?}")]
    BadAction(String),
    #[error("action {0:?} is not in this scenario's vocabulary")]
    NotInVocabulary(String),
    #[error("scenario document: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    MoveTo(String),
    Open(String),
    Close(String),
    Grasp(String),
    Lift,
    PlaceAt(String),
    LookFrom(String),
    PlugInto(String),
    NoOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Move,
    Open,
    Close,
    Grasp,
    Lift,
    Place,
    Look,
    Plug,
    NoOp,
}

impl ActionKind {
    pub const ALL: [ActionKind; 9] = [
        ActionKind::Move,
        ActionKind::Open,
        ActionKind::Close,
        ActionKind::Grasp,
        ActionKind::Lift,
        ActionKind::Place,
        ActionKind::Look,
        ActionKind::Plug,
        ActionKind::NoOp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Move => "move",
            ActionKind::Open => "open",
            ActionKind::Close => "close",
            ActionKind::Grasp => "grasp",
            ActionKind::Lift => "lift",
            ActionKind::Place => "place",
            ActionKind::Look => "look",
            ActionKind::Plug => "plug",
            ActionKind::NoOp => "no_op",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).expect("listed")
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::MoveTo(_) => ActionKind::Move,
            Action::Open(_) => ActionKind::Open,
            Action::Close(_) => ActionKind::Close,
            Action::Grasp(_) => ActionKind::Grasp,
            Action::Lift => ActionKind::Lift,
            Action::PlaceAt(_) => ActionKind::Place,
            Action::LookFrom(_) => ActionKind::Look,
            Action::PlugInto(_) => ActionKind::Plug,
            Action::NoOp => ActionKind::NoOp,
        }
    }

    /// Where the gripper has to travel for a move, if anywhere.
    pub fn destination(&self) -> Option<(f64, f64)> {
        match self {
            Action::MoveTo(l) => location_xy(l),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::MoveTo(l) => write!(f, "move to {l}"),
            Action::Open(c) => write!(f, "open {c}"),
            Action::Close(c) => write!(f, "close {c}"),
            Action::Grasp(o) => write!(f, "grasp {o}"),
            Action::Lift => f.write_str("lift"),
            Action::PlaceAt(l) => write!(f, "place at {l}"),
            Action::LookFrom(v) => write!(f, "look from {v}"),
            Action::PlugInto(s) => write!(f, "plug into {s}"),
            Action::NoOp => f.write_str("no_op"),
        }
    }
}

impl FromStr for Action {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let bad = || SimError::BadAction(s.to_owned());
        Ok(match words.as_slice() {
            ["move", "to", l] => Action::MoveTo(l.to_string()),
            ["open", c] => Action::Open(c.to_string()),
            ["close", c] => Action::Close(c.to_string()),
            ["grasp", o] => Action::Grasp(o.to_string()),
            ["lift"] => Action::Lift,
            ["place", "at", l] => Action::PlaceAt(l.to_string()),
            ["look", "from", v] if VIEWS.contains(v) => Action::LookFrom(v.to_string()),
            ["plug", "into", t] => Action::PlugInto(t.to_string()),
            ["no_op"] => Action::NoOp,
            _ => return Err(bad()),
        })
    }
}

/// Why an action cannot be attempted in a state.
pub fn precondition_failure(world: &WorldState, action: &Action) -> Option<String> {
    let g = &world.gripper;
    let at = |loc: &str| g.location.as_deref() == Some(loc);
    match action {
        Action::MoveTo(l) => {
            if location_xy(l).is_none() {
                return Some(format!("unknown location {l}"));
            }
            if at(l) {
                return Some(format!("already at {l}"));
            }
        }
        Action::Open(c) | Action::Close(c) => {
            let Some(cont) = world.containers.get(c) else { return Some(format!("no container {c}")) };
            if !at(&cont.location) {
                return Some(format!("{c} is out of reach"));
            }
            let want_open = matches!(action, Action::Open(_));
            if cont.open == want_open {
                return Some(format!("{c} is already {}", if want_open { "open" } else { "closed" }));
            }
            if g.holding.is_some() {
                return Some("hand is full".into());
            }
        }
        Action::Grasp(id) => {
            let Some(o) = world.objects.get(id).filter(|o| o.present) else { return Some(format!("{id} is not there")) };
            if g.holding.is_some() {
                return Some("hand is full".into());
            }
            if let Some(c) = &o.container {
                if !world.containers.get(c).is_some_and(|c| c.open) {
                    return Some(format!("{id} is inside closed {c}"));
                }
            }
            if o.occluded {
                return Some(format!("{id} is not in view"));
            }
            if !at(&world.reach_location(id).unwrap_or_default()) {
                return Some(format!("{id} is out of reach"));
            }
        }
        Action::Lift => match &g.holding {
            None => return Some("nothing held".into()),
            Some(_) if g.lifted => return Some("already lifted".into()),
            _ => {}
        },
        Action::PlaceAt(l) => {
            if g.holding.is_none() {
                return Some("nothing held".into());
            }
            if !at(l) {
                return Some(format!("not at {l}"));
            }
        }
        Action::LookFrom(v) => {
            if &world.viewpoint == v {
                return Some(format!("already viewing from {v}"));
            }
        }
        Action::PlugInto(s) => {
            let Some(held) = &g.holding else { return Some("nothing held".into()) };
            let Some(socket) = world.objects.get(s).filter(|o| o.kind == "socket") else {
                return Some(format!("no socket {s}"));
            };
            if world.objects.get(held).map(|o| o.kind.as_str()) != Some("charger") {
                return Some(format!("{held} is not a charger"));
            }
            if !at(&socket.location) {
                return Some(format!("{s} is out of reach"));
            }
        }
        Action::NoOp => {}
    }
    None
}

/// Why an attempted action fails even though it could be tried. Used for
/// deterministic mismatches such as the wrong connector.
pub fn semantic_failure(world: &WorldState, action: &Action) -> Option<String> {
    if let Action::PlugInto(s) = action {
        let held = world.gripper.holding.as_ref()?;
        let plug = world.objects.get(held)?.connector.as_ref();
        let socket = world.objects.get(s)?.connector.as_ref();
        if plug != socket {
            return Some(format!("connector mismatch between {held} and {s}"));
        }
    }
    None
}

/// Apply the successful outcome of `action`. Preconditions must hold.
pub fn apply_success(world: &mut WorldState, action: &Action) {
    match action {
        Action::MoveTo(l) => {
            world.gripper.location = Some(l.clone());
            world.gripper.position = location_xy(l).expect("checked");
        }
        Action::Open(c) => world.containers.get_mut(c).expect("checked").open = true,
        Action::Close(c) => world.containers.get_mut(c).expect("checked").open = false,
        Action::Grasp(id) => {
            let o = world.objects.get_mut(id).expect("checked");
            o.location = "gripper".into();
            o.container = None;
            world.gripper.holding = Some(id.clone());
            world.gripper.lifted = false;
        }
        Action::Lift => world.gripper.lifted = true,
        Action::PlaceAt(l) => {
            let id = world.gripper.holding.take().expect("checked");
            world.gripper.lifted = false;
            if let Some(o) = world.objects.get_mut(&id) {
                o.location = l.clone();
                o.hidden_from.clear();
            }
        }
        Action::LookFrom(v) => world.viewpoint = v.clone(),
        Action::PlugInto(s) => {
            let id = world.gripper.holding.take().expect("checked");
            world.gripper.lifted = false;
            let loc = world.objects[s].location.clone();
            if let Some(o) = world.objects.get_mut(&id) {
                o.location = loc;
            }
            world.plugged.insert(id, s.clone());
        }
        Action::NoOp => {}
    }
    world.refresh_occlusion();
}
