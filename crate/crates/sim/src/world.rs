//! World state: objects, containers, gripper and the current viewpoint.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const VIEWS: [&str; 3] = ["front", "left", "right"];

/// Named places and their planar coordinates.
pub fn location_xy(name: &str) -> Option<(f64, f64)> {
    Some(match name {
        "user" => (0.0, 0.0),
        "table" => (400.0, 0.0),
        "cabinet" => (0.0, 600.0),
        "drawer" => (0.0, -600.0),
        "shelf" => (-500.0, 300.0),
        "socket" => (300.0, 400.0),
        "counter" => (2000.0, 0.0),
        _ => return None,
    })
}

pub const LOCATIONS: [&str; 7] = ["cabinet", "counter", "drawer", "shelf", "socket", "table", "user"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Object {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    /// Named location, or `"gripper"` while held.
    pub location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
    /// Views from which another object blocks the line of sight.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub hidden_from: BTreeSet<String>,
    /// Derived from `hidden_from`, the viewpoint and container state.
    #[serde(default)]
    pub occluded: bool,
    #[serde(default = "yes")]
    pub present: bool,
    /// Readable label, when one faces the camera.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Connector type for chargers and sockets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connector: Option<String>,
}

fn yes() -> bool {
    true
}

impl Object {
    pub fn new(kind: &str, location: &str) -> Self {
        Self {
            kind: kind.into(),
            color: None,
            location: location.into(),
            container: None,
            hidden_from: BTreeSet::new(),
            occluded: false,
            present: true,
            label: None,
            connector: None,
        }
    }

    pub fn colored(mut self, color: &str) -> Self {
        self.color = Some(color.into());
        self
    }

    pub fn inside(mut self, container: &str) -> Self {
        self.container = Some(container.into());
        self
    }

    pub fn hidden_from(mut self, views: &[&str]) -> Self {
        self.hidden_from = views.iter().map(|v| v.to_string()).collect();
        self
    }

    pub fn labelled(mut self, label: &str) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn connector(mut self, c: &str) -> Self {
        self.connector = Some(c.into());
        self
    }

    pub fn is_visible(&self) -> bool {
        self.present && !self.occluded
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Container {
    pub location: String,
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub holding: Option<String>,
    /// Last named location reached; `None` while travelling.
    pub location: Option<String>,
    pub lifted: bool,
    pub position: (f64, f64),
}

impl Gripper {
    pub fn at(location: &str) -> Self {
        Self {
            holding: None,
            location: Some(location.into()),
            lifted: false,
            position: location_xy(location).expect("known location"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: BTreeMap<String, Object>,
    pub containers: BTreeMap<String, Container>,
    pub gripper: Gripper,
    pub viewpoint: String,
    /// Charger id → socket id.
    #[serde(default)]
    pub plugged: BTreeMap<String, String>,
    pub tick: u64,
}

impl WorldState {
    pub fn new(gripper_at: &str) -> Self {
        Self {
            objects: BTreeMap::new(),
            containers: BTreeMap::new(),
            gripper: Gripper::at(gripper_at),
            viewpoint: "front".into(),
            plugged: BTreeMap::new(),
            tick: 0,
        }
    }

    pub fn with_object(mut self, id: &str, object: Object) -> Self {
        self.objects.insert(id.into(), object);
        self.refresh_occlusion();
        self
    }

    pub fn with_container(mut self, id: &str, location: &str, open: bool) -> Self {
        self.containers.insert(id.into(), Container { location: location.into(), open });
        self.refresh_occlusion();
        self
    }

    /// Recompute `occluded` for every object from the viewpoint and the
    /// containers. Positions are untouched.
    pub fn refresh_occlusion(&mut self) {
        let view = self.viewpoint.clone();
        let closed: BTreeSet<String> = self.containers.iter().filter(|(_, c)| !c.open).map(|(id, _)| id.clone()).collect();
        for o in self.objects.values_mut() {
            let boxed = o.container.as_ref().is_some_and(|c| closed.contains(c));
            let blocked = o.location != "gripper" && o.hidden_from.contains(&view);
            o.occluded = boxed || blocked;
        }
    }

    /// Where an object can be reached: its container's location or its own.
    pub fn reach_location(&self, id: &str) -> Option<String> {
        let o = self.objects.get(id)?;
        match &o.container {
            Some(c) => self.containers.get(c).map(|c| c.location.clone()),
            None => Some(o.location.clone()),
        }
    }

    pub fn present_count(&self) -> usize {
        self.objects.values().filter(|o| o.present).count()
    }
}
