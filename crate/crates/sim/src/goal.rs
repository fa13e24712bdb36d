//! Goal predicates, their text form and a progress heuristic.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::world::{WorldState, LOCATIONS, VIEWS};

/// An object named by id, or any present object of a kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjRef {
    Id(String),
    Kind(String),
}

impl ObjRef {
    /// Present objects the reference can denote, ascending by id.
    pub fn candidates<'a>(&'a self, world: &'a WorldState) -> impl Iterator<Item = &'a str> + 'a {
        world
            .objects
            .iter()
            .filter(move |(id, o)| {
                o.present
                    && match self {
                        ObjRef::Id(x) => *id == x,
                        ObjRef::Kind(k) => &o.kind == k,
                    }
            })
            .map(|(id, _)| id.as_str())
    }

    pub fn matches(&self, world: &WorldState, id: &str) -> bool {
        self.candidates(world).any(|c| c == id)
    }

    fn text(&self) -> &str {
        match self {
            ObjRef::Id(s) | ObjRef::Kind(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Goal {
    Holding(ObjRef),
    Lifted(ObjRef),
    Delivered(ObjRef, String),
    Open(String),
    View(String),
    Visible(ObjRef),
    Plugged(ObjRef, String),
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::Holding(o) => write!(f, "grasp {}", o.text()),
            Goal::Lifted(o) => write!(f, "lift {}", o.text()),
            Goal::Delivered(o, l) => write!(f, "deliver {} to {l}", o.text()),
            Goal::Open(c) => write!(f, "open {c}"),
            Goal::View(v) => write!(f, "look from {v}"),
            Goal::Visible(o) => write!(f, "find {}", o.text()),
            Goal::Plugged(o, s) => write!(f, "plug {} into {s}", o.text()),
        }
    }
}

impl Goal {
    /// Parse a subtask phrase. Object words that name an object id in
    /// `world` refer to that object; other words refer to a kind.
    pub fn parse(text: &str, world: &WorldState) -> Option<Goal> {
        let obj = |w: &str| {
            if world.objects.contains_key(w) {
                ObjRef::Id(w.to_owned())
            } else {
                ObjRef::Kind(w.to_owned())
            }
        };
        let lowered = text.to_lowercase();
        let words: Vec<&str> = lowered.split_whitespace().filter(|w| !matches!(*w, "the" | "a" | "an")).collect();
        Some(match words.as_slice() {
            ["grasp", o] => Goal::Holding(obj(o)),
            ["lift", o] => Goal::Lifted(obj(o)),
            ["deliver", o, "to", l] => Goal::Delivered(obj(o), l.to_string()),
            ["open", c] => Goal::Open(c.to_string()),
            ["look", "from", v] => Goal::View(v.to_string()),
            ["find", o] => Goal::Visible(obj(o)),
            ["plug", o, "into", s] => Goal::Plugged(obj(o), s.to_string()),
            _ => return None,
        })
    }

    pub fn holds(&self, world: &WorldState) -> bool {
        let g = &world.gripper;
        let held_matches = |o: &ObjRef| g.holding.as_deref().is_some_and(|h| o.matches(world, h));
        match self {
            Goal::Holding(o) => held_matches(o),
            Goal::Lifted(o) => held_matches(o) && g.lifted,
            Goal::Delivered(o, l) => o.candidates(world).any(|id| world.objects[id].location == *l),
            Goal::Open(c) => world.containers.get(c).is_some_and(|c| c.open),
            Goal::View(v) => &world.viewpoint == v,
            Goal::Visible(o) => o.candidates(world).any(|id| world.objects[id].is_visible()),
            Goal::Plugged(o, s) => world.plugged.iter().any(|(c, sock)| sock == s && o.matches(world, c)),
        }
    }

    /// Progress toward the goal in [0, 1]; 1 exactly when the goal holds.
    pub fn proximity(&self, world: &WorldState) -> f64 {
        if self.holds(world) {
            return 1.0;
        }
        let p = match self {
            Goal::Holding(o) => holding_progress(o, world),
            Goal::Lifted(o) => 0.85 * holding_progress(o, world),
            Goal::Delivered(o, l) => {
                let holding = world.gripper.holding.as_deref().is_some_and(|h| o.matches(world, h));
                if holding {
                    let lift = if world.gripper.lifted { 0.1 } else { 0.0 };
                    let there = if world.gripper.location.as_deref() == Some(l.as_str()) { 0.2 } else { 0.0 };
                    0.6 + lift + there
                } else {
                    0.55 * holding_progress(o, world)
                }
            }
            Goal::Open(c) => {
                let here = world.containers.get(c).is_some_and(|c| world.gripper.location.as_deref() == Some(&c.location));
                let free = world.gripper.holding.is_none();
                0.3 * f64::from(u8::from(free)) + 0.4 * f64::from(u8::from(here && free))
            }
            Goal::View(_) => 0.0,
            Goal::Visible(_) => 0.0,
            Goal::Plugged(o, s) => {
                let holding = world.gripper.holding.as_deref().is_some_and(|h| o.matches(world, h));
                let at_socket = world.objects.get(s).is_some_and(|x| world.gripper.location.as_deref() == Some(&x.location));
                if holding {
                    0.6 + if at_socket { 0.3 } else { 0.0 }
                } else {
                    0.55 * holding_progress(o, world)
                }
            }
        };
        p.clamp(0.0, 0.99)
    }
}

fn holding_progress(o: &ObjRef, world: &WorldState) -> f64 {
    let g = &world.gripper;
    if g.holding.as_deref().is_some_and(|h| o.matches(world, h)) {
        return 1.0;
    }
    // Best stage reached over the candidates we can see.
    let free = g.holding.is_none();
    let mut best: f64 = if free { 0.1 } else { 0.0 };
    for id in o.candidates(world) {
        let obj = &world.objects[id];
        let container_open = obj.container.as_ref().is_none_or(|c| world.containers.get(c).is_some_and(|c| c.open));
        let reach = world.reach_location(id).unwrap_or_default();
        let here = g.location.as_deref() == Some(reach.as_str());
        let mut p: f64 = 0.0;
        if free {
            p += 0.1;
            if here {
                p += 0.3;
            }
            if here && container_open {
                p += 0.2;
            }
            if here && container_open && obj.is_visible() {
                p += 0.2;
            }
        }
        best = best.max(p);
    }
    best
}

/// Every subtask phrase meaningful in `world`, for plan validation.
pub fn phrase_vocabulary(world: &WorldState) -> BTreeSet<String> {
    let mut refs: BTreeSet<String> = world.objects.keys().cloned().collect();
    refs.extend(world.objects.values().map(|o| o.kind.clone()));
    refs.insert("apple".into());
    let mut out = BTreeSet::new();
    for r in &refs {
        out.insert(format!("grasp {r}"));
        out.insert(format!("lift {r}"));
        out.insert(format!("find {r}"));
        for l in LOCATIONS {
            out.insert(format!("deliver {r} to {l}"));
        }
        for (s, o) in &world.objects {
            if o.kind == "socket" {
                out.insert(format!("plug {r} into {s}"));
            }
        }
    }
    for c in world.containers.keys() {
        out.insert(format!("open {c}"));
    }
    for v in VIEWS {
        out.insert(format!("look from {v}"));
    }
    out
}
