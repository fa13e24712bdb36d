//! What the agents get to see of the world.

use cortex_core::embed::FeatureHasher;
use cortex_core::protocol::Document;

use crate::world::WorldState;

#[derive(Debug, Clone, PartialEq)]
pub struct SeenObject {
    pub id: String,
    pub kind: String,
    pub color: Option<String>,
    pub location: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub tick: u64,
    pub objects: Vec<SeenObject>,
    pub containers: Vec<(String, bool)>,
    pub gripper_location: Option<String>,
    pub holding: Option<String>,
    pub lifted: bool,
    pub viewpoint: String,
    pub plugged: Vec<(String, String)>,
}

/// Render the agent-visible part of `world`. Deleted and occluded objects
/// are left out.
pub fn observe(world: &WorldState) -> Observation {
    Observation {
        tick: world.tick,
        objects: world
            .objects
            .iter()
            .filter(|(_, o)| o.is_visible())
            .map(|(id, o)| SeenObject {
                id: id.clone(),
                kind: o.kind.clone(),
                color: o.color.clone(),
                location: o.location.clone(),
                label: o.label.clone(),
            })
            .collect(),
        containers: world.containers.iter().map(|(id, c)| (id.clone(), c.open)).collect(),
        gripper_location: world.gripper.location.clone(),
        holding: world.gripper.holding.clone().filter(|h| world.objects.get(h).is_some_and(|o| o.present)),
        lifted: world.gripper.lifted,
        viewpoint: world.viewpoint.clone(),
        plugged: world.plugged.iter().map(|(a, b)| (a.clone(), b.clone())).collect(),
    }
}

impl Observation {
    pub fn sees(&self, id: &str) -> bool {
        self.objects.iter().any(|o| o.id == id)
    }

    /// Symbolic facts, one string each, used for expectation checks.
    pub fn facts(&self) -> Vec<String> {
        let mut f: Vec<String> = self.objects.iter().map(|o| format!("visible:{}@{}", o.id, o.location)).collect();
        f.extend(self.containers.iter().map(|(c, open)| format!("{}:{c}", if *open { "open" } else { "closed" })));
        f.push(format!("holding:{}", self.holding.as_deref().unwrap_or("nothing")));
        f.push(format!("lifted:{}", self.lifted));
        f.push(format!("gripper:{}", self.gripper_location.as_deref().unwrap_or("moving")));
        f.push(format!("view:{}", self.viewpoint));
        f.extend(self.plugged.iter().map(|(c, s)| format!("plugged:{c}>{s}")));
        f.sort();
        f
    }

    /// Sum of hashed fact features (unnormalized, so a single differing fact
    /// moves some coordinate by about 0.7).
    pub fn embedding(&self, hasher: &FeatureHasher) -> Vec<f64> {
        let facts = self.facts();
        hasher.bag(facts.iter().map(String::as_str))
    }

    /// `EnvObservation` payload body.
    pub fn to_document(&self) -> Document {
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let mut entries = vec![
                    ("id", Document::from(o.id.as_str())),
                    ("kind", Document::from(o.kind.as_str())),
                    ("color", Document::from(o.color.clone().unwrap_or_default())),
                    ("location", Document::from(o.location.as_str())),
                ];
                if let Some(l) = &o.label {
                    entries.push(("label", Document::from(l.as_str())));
                }
                Document::object(entries)
            })
            .collect();
        Document::object([
            ("tick", Document::from(self.tick)),
            ("objects", Document::Array(objects)),
            (
                "gripper",
                Document::object([
                    ("location", Document::from(self.gripper_location.clone().unwrap_or_else(|| "moving".into()))),
                    ("holding", Document::from(self.holding.clone())),
                    ("lifted", Document::from(self.lifted)),
                ]),
            ),
            (
                "containers",
                Document::Array(
                    self.containers
                        .iter()
                        .map(|(id, open)| {
                            Document::object([("id", Document::from(id.as_str())), ("open", Document::from(*open))])
                        })
                        .collect(),
                ),
            ),
        ])
    }
}
