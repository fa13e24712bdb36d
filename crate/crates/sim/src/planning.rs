//! Transition model over the agent's belief, used to grow state trees.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use cortex_core::planner::{StateFactors, TransitionModel};

use crate::action::{apply_success, precondition_failure, Action, ActionKind};
use crate::goal::{Goal, ObjRef};
use crate::observe::Observation;
use crate::scenario::TransitionTable;
use crate::world::{Object, WorldState};

/// Chance that an unsearched container holds the target when nothing
/// points at it.
pub const DEFAULT_SEARCH_PRIOR: f64 = 0.35;
/// Chance that an untried viewpoint reveals something hidden behind a
/// visible occluder.
pub const VIEW_PRIOR: f64 = 0.5;

/// The agent's picture of the world: only what it has seen, plus what it
/// already searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub world: WorldState,
    pub searched: BTreeSet<String>,
    pub tried_views: BTreeSet<String>,
}

impl Belief {
    /// Build from an observation. Container locations are static scene
    /// knowledge taken from `layout`.
    pub fn from_observation(
        obs: &Observation,
        layout: &WorldState,
        searched: &BTreeSet<String>,
        tried_views: &BTreeSet<String>,
    ) -> Self {
        let mut world = WorldState::new("user");
        world.tick = obs.tick;
        world.viewpoint = obs.viewpoint.clone();
        world.gripper.location = obs.gripper_location.clone();
        world.gripper.holding = obs.holding.clone();
        world.gripper.lifted = obs.lifted;
        for (id, open) in &obs.containers {
            let location = layout.containers.get(id).map_or_else(|| id.clone(), |c| c.location.clone());
            world.containers.insert(id.clone(), crate::world::Container { location, open: *open });
        }
        for o in &obs.objects {
            let mut obj = Object::new(&o.kind, &o.location);
            obj.color = o.color.clone();
            obj.label = o.label.clone();
            if let Some(c) = layout.objects.get(&o.id).and_then(|x| x.container.clone()) {
                obj.container = Some(c);
            }
            world.objects.insert(o.id.clone(), obj);
        }
        for (c, s) in &obs.plugged {
            world.plugged.insert(c.clone(), s.clone());
        }
        let mut searched = searched.clone();
        searched.extend(obs.containers.iter().filter(|(_, open)| *open).map(|(c, _)| c.clone()));
        let mut tried_views = tried_views.clone();
        tried_views.insert(obs.viewpoint.clone());
        Self { world, searched, tried_views }
    }

    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("belief serializes")
    }

    pub fn from_key(key: &str) -> Option<Self> {
        serde_json::from_str(key).ok()
    }
}

fn target_of(goal: &Goal) -> Option<&ObjRef> {
    match goal {
        Goal::Holding(o) | Goal::Lifted(o) | Goal::Delivered(o, _) | Goal::Visible(o) | Goal::Plugged(o, _) => Some(o),
        Goal::Open(_) | Goal::View(_) => None,
    }
}

fn placeholder_id(target: &ObjRef) -> String {
    match target {
        ObjRef::Id(id) => id.clone(),
        ObjRef::Kind(k) => format!("{k}?"),
    }
}

fn placeholder_kind(target: &ObjRef, layout: &WorldState) -> String {
    match target {
        ObjRef::Kind(k) => k.clone(),
        ObjRef::Id(id) => layout.objects.get(id).map_or_else(|| id.clone(), |o| o.kind.clone()),
    }
}

#[derive(Debug, Clone)]
pub struct PlanningModel {
    pub goal: Goal,
    pub vocab: Vec<Action>,
    pub table: TransitionTable,
    /// Per-container prior that it holds the target.
    pub search_prior: BTreeMap<String, f64>,
    /// Static scene layout (container locations, object kinds by id).
    pub layout: WorldState,
}

impl PlanningModel {
    pub fn new(goal: Goal, vocab: Vec<Action>, table: TransitionTable, layout: WorldState) -> Self {
        Self { goal, vocab, table, search_prior: BTreeMap::new(), layout }
    }

    /// Raise the prior of every container mentioned in `text`.
    pub fn with_hint(mut self, text: &str) -> Self {
        let lowered = text.to_lowercase();
        for c in self.layout.containers.keys() {
            if lowered.contains(c.as_str()) {
                self.search_prior.insert(c.clone(), 0.8);
            }
        }
        self
    }

    fn prior(&self, container: &str) -> f64 {
        self.search_prior.get(container).copied().unwrap_or(DEFAULT_SEARCH_PRIOR)
    }

    fn target_seen(&self, b: &Belief) -> bool {
        match target_of(&self.goal) {
            Some(t) => t.candidates(&b.world).next().is_some(),
            None => true,
        }
    }

    fn has_occluder(&self, b: &Belief) -> bool {
        b.world.objects.values().any(|o| o.kind == "box")
    }

    fn untried_view(&self, b: &Belief, v: &str) -> bool {
        self.has_occluder(b) && !b.tried_views.contains(v)
    }

    /// Progress while the target has not been seen yet.
    fn search_progress(&self, b: &Belief) -> f64 {
        let g = &b.world.gripper;
        let mut best: f64 = if g.holding.is_none() { 0.1 } else { 0.0 };
        if g.holding.is_none() {
            for (c, cont) in &b.world.containers {
                if !b.searched.contains(c) && g.location.as_deref() == Some(cont.location.as_str()) {
                    best = best.max(0.1 + 0.1 * self.prior(c));
                }
            }
        }
        best
    }

    fn proximity(&self, b: &Belief) -> f64 {
        if self.goal.holds(&b.world) {
            return 1.0;
        }
        if !self.target_seen(b) {
            let scale = match self.goal {
                Goal::Lifted(_) => 0.85,
                Goal::Delivered(..) | Goal::Plugged(..) => 0.55,
                _ => 1.0,
            };
            return scale * self.search_progress(b);
        }
        self.goal.proximity(&b.world)
    }

    fn useful(&self, b: &Belief, a: &Action) -> bool {
        match a {
            Action::NoOp | Action::Close(_) => false,
            Action::LookFrom(v) => {
                !self.target_seen(b) && self.untried_view(b, v) || matches!(&self.goal, Goal::View(g) if g == v)
            }
            Action::Open(c) => !b.searched.contains(c) || matches!(&self.goal, Goal::Open(g) if g == c),
            _ => true,
        }
    }
}

impl TransitionModel for PlanningModel {
    fn is_goal(&self, state: &str) -> bool {
        Belief::from_key(state).is_some_and(|b| self.goal.holds(&b.world))
    }

    fn applicable(&self, state: &str) -> Vec<String> {
        let Some(b) = Belief::from_key(state) else { return Vec::new() };
        self.vocab
            .iter()
            .filter(|a| precondition_failure(&b.world, a).is_none() && self.useful(&b, a))
            .map(ToString::to_string)
            .collect()
    }

    fn outcomes(&self, state: &str, action: &str) -> Vec<(String, f64)> {
        let (Some(b), Ok(a)) = (Belief::from_key(state), action.parse::<Action>()) else { return Vec::new() };
        let p = if a.kind() == ActionKind::Move { 1.0 } else { self.table.get(a.kind()).success };
        let mut done = b.clone();
        apply_success(&mut done.world, &a);
        let mut out = Vec::new();
        let target = target_of(&self.goal).filter(|_| !self.target_seen(&b));
        match (&a, target) {
            (Action::Open(c), Some(t)) if !b.searched.contains(c) => {
                done.searched.insert(c.clone());
                let q = self.prior(c);
                let mut found = done.clone();
                let loc = found.world.containers[c].location.clone();
                found.world.objects.insert(placeholder_id(t), Object::new(&placeholder_kind(t, &self.layout), &loc).inside(c));
                found.world.refresh_occlusion();
                out.push((found.key(), p * q));
                out.push((done.key(), p * (1.0 - q)));
            }
            (Action::LookFrom(v), Some(t)) => {
                done.tried_views.insert(v.clone());
                let occluder = b.world.objects.values().find(|o| o.kind == "box").map(|o| o.location.clone());
                if let Some(loc) = occluder {
                    let mut found = done.clone();
                    found.world.objects.insert(placeholder_id(t), Object::new(&placeholder_kind(t, &self.layout), &loc));
                    out.push((found.key(), p * VIEW_PRIOR));
                    out.push((done.key(), p * (1.0 - VIEW_PRIOR)));
                } else {
                    out.push((done.key(), p));
                }
            }
            (Action::Open(c), None) => {
                done.searched.insert(c.clone());
                out.push((done.key(), p));
            }
            _ => out.push((done.key(), p)),
        }
        if p < 1.0 {
            out.push((b.key(), 1.0 - p));
        }
        out
    }

    fn factors(&self, state: &str) -> StateFactors {
        let prox = Belief::from_key(state).map_or(0.0, |b| self.proximity(&b));
        StateFactors::from_raw(prox, 1.0, false, 0.0)
    }
}
