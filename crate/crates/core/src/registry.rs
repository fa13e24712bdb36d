//! Agent registry: descriptors, default channel subscriptions, expertise
//! lookup, assignment checks and crash-aware re-initialization.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::contracts::DecompositionPlan;
use crate::clock::Tick;
use crate::protocol::{AgentId, Document, Importance, LogId};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("agent {0} is already registered")]
    DuplicateId(AgentId),
    #[error("{role:?} agent {agent} must declare at least one expertise tag")]
    MissingExpertise { agent: AgentId, role: Role },
    #[error("agent {0} is not registered")]
    UnknownAgent(AgentId),
    #[error("agent {0} is not in the Failed state")]
    NotFailed(AgentId),
    #[error("subtask {subtask_id} is assigned to unknown worker {worker}")]
    UnknownWorker { subtask_id: String, worker: String },
    #[error("worker {worker} is assigned more than one subtask ({first} and {second})")]
    DuplicateAssignment { worker: String, first: String, second: String },
    #[error("registry config: {0}")]
    Config(String),
    #[error("crash log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Worker,
    Inspector,
    Planner,
    Provider,
    /// Infrastructure participants (memory broadcaster, state reviewer,
    /// reactive controller) that publish on the bus but take no tasks.
    System,
}

impl Role {
    pub fn default_subscriptions(self) -> BTreeSet<Importance> {
        match self {
            Role::Provider => [Importance::Medium, Importance::Low].into(),
            _ => Importance::ALL.into(),
        }
    }

    fn needs_expertise(self) -> bool {
        matches!(self, Role::Worker | Role::Provider)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentStatus {
    Active,
    Failed,
    Restarting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub agent_id: AgentId,
    pub role: Role,
    #[serde(default)]
    pub expertise: Vec<String>,
    #[serde(default = "active")]
    pub status: AgentStatus,
}

fn active() -> AgentStatus {
    AgentStatus::Active
}

impl AgentDescriptor {
    pub fn new<S: Into<String>>(agent_id: &str, role: Role, expertise: impl IntoIterator<Item = S>) -> Self {
        Self {
            agent_id: AgentId::from(agent_id),
            role,
            expertise: expertise.into_iter().map(Into::into).collect(),
            status: AgentStatus::Active,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrashRecord {
    pub agent_id: AgentId,
    pub tick: Tick,
    pub last_message_log_id: Option<LogId>,
    pub context_snapshot: Document,
}

impl CrashRecord {
    pub fn to_document(&self) -> Document {
        Document::object([
            ("agent_id", Document::from(self.agent_id.as_str())),
            ("tick", Document::from(self.tick.0)),
            ("last_message_log_id", Document::from(self.last_message_log_id.map(|id| id.to_string()))),
            ("context_snapshot", self.context_snapshot.clone()),
        ])
    }
}

#[derive(Debug, Clone)]
struct Entry {
    initial: AgentDescriptor,
    current: AgentDescriptor,
    subscriptions: BTreeSet<Importance>,
    history: Vec<AgentStatus>,
    last_log_id: Option<LogId>,
    registered_at: Tick,
}

#[derive(Debug, Default)]
struct Inner {
    agents: BTreeMap<AgentId, Entry>,
    crashes: Vec<CrashRecord>,
}

/// Shared registry: concurrent reads, serialized mutations.
#[derive(Debug, Default)]
pub struct Registry {
    inner: RwLock<Inner>,
    crash_log: Option<PathBuf>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also append every crash record to `path` as one JSON line.
    pub fn with_crash_log(path: impl Into<PathBuf>) -> Self {
        Self { inner: RwLock::default(), crash_log: Some(path.into()) }
    }

    /// Parse a config file holding a list of `{agent_id, role, expertise}`.
    pub fn load_config(path: &Path) -> Result<Vec<AgentDescriptor>, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| RegistryError::Config(format!("{}: {e}", path.display())))
    }

    pub fn register_all(&self, descriptors: impl IntoIterator<Item = AgentDescriptor>) -> Result<Vec<AgentId>, RegistryError> {
        descriptors.into_iter().map(|d| self.register_agent(d)).collect()
    }

    pub fn register_agent(&self, descriptor: AgentDescriptor) -> Result<AgentId, RegistryError> {
        self.register_agent_at(descriptor, Tick::ZERO)
    }

    pub fn register_agent_at(&self, mut descriptor: AgentDescriptor, now: Tick) -> Result<AgentId, RegistryError> {
        if descriptor.role.needs_expertise() && descriptor.expertise.iter().all(|t| t.trim().is_empty()) {
            return Err(RegistryError::MissingExpertise { agent: descriptor.agent_id, role: descriptor.role });
        }
        let mut inner = self.inner.write().unwrap();
        if inner.agents.contains_key(&descriptor.agent_id) {
            return Err(RegistryError::DuplicateId(descriptor.agent_id));
        }
        descriptor.status = AgentStatus::Active;
        let id = descriptor.agent_id.clone();
        inner.agents.insert(
            id.clone(),
            Entry {
                subscriptions: descriptor.role.default_subscriptions(),
                initial: descriptor.clone(),
                current: descriptor,
                history: vec![AgentStatus::Active],
                last_log_id: None,
                registered_at: now,
            },
        );
        Ok(id)
    }

    pub fn is_registered(&self, id: &AgentId) -> bool {
        self.inner.read().unwrap().agents.contains_key(id)
    }

    pub fn descriptor(&self, id: &AgentId) -> Option<AgentDescriptor> {
        self.inner.read().unwrap().agents.get(id).map(|e| e.current.clone())
    }

    pub fn status(&self, id: &AgentId) -> Option<AgentStatus> {
        self.inner.read().unwrap().agents.get(id).map(|e| e.current.status)
    }

    pub fn is_active(&self, id: &AgentId) -> bool {
        self.status(id) == Some(AgentStatus::Active)
    }

    pub fn registered_at(&self, id: &AgentId) -> Option<Tick> {
        self.inner.read().unwrap().agents.get(id).map(|e| e.registered_at)
    }

    /// Every status the agent has held, oldest first.
    pub fn status_history(&self, id: &AgentId) -> Vec<AgentStatus> {
        self.inner.read().unwrap().agents.get(id).map(|e| e.history.clone()).unwrap_or_default()
    }

    pub fn agents(&self) -> Vec<AgentDescriptor> {
        self.inner.read().unwrap().agents.values().map(|e| e.current.clone()).collect()
    }

    pub fn active_agents(&self) -> Vec<AgentId> {
        let inner = self.inner.read().unwrap();
        inner.agents.iter().filter(|(_, e)| e.current.status == AgentStatus::Active).map(|(id, _)| id.clone()).collect()
    }

    pub fn agents_with_role(&self, role: Role) -> Vec<AgentDescriptor> {
        let inner = self.inner.read().unwrap();
        inner.agents.values().filter(|e| e.current.role == role).map(|e| e.current.clone()).collect()
    }

    pub fn subscriptions(&self, id: &AgentId) -> Option<BTreeSet<Importance>> {
        self.inner.read().unwrap().agents.get(id).map(|e| e.subscriptions.clone())
    }

    /// Replace the agent's channel set in one step.
    pub fn set_subscriptions(&self, id: &AgentId, set: BTreeSet<Importance>) -> Result<(), RegistryError> {
        let mut inner = self.inner.write().unwrap();
        let entry = inner.agents.get_mut(id).ok_or_else(|| RegistryError::UnknownAgent(id.clone()))?;
        entry.subscriptions = set;
        Ok(())
    }

    /// Subscribers of one priority channel, in id order.
    pub fn subscribers_of(&self, level: Importance) -> Vec<AgentId> {
        let inner = self.inner.read().unwrap();
        inner.agents.iter().filter(|(_, e)| e.subscriptions.contains(&level)).map(|(id, _)| id.clone()).collect()
    }

    pub fn record_delivery(&self, id: &AgentId, log_id: LogId) {
        if let Some(entry) = self.inner.write().unwrap().agents.get_mut(id) {
            entry.last_log_id = Some(log_id);
        }
    }

    /// Active workers and providers ranked by descending overlap with
    /// `tags`, ties by ascending id. Agents without overlap are left out.
    pub fn lookup_by_expertise<S: AsRef<str>>(&self, tags: &[S]) -> Vec<AgentId> {
        let wanted: BTreeSet<String> = tags.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let inner = self.inner.read().unwrap();
        let mut ranked: Vec<(usize, AgentId)> = inner
            .agents
            .iter()
            .filter(|(_, e)| e.current.status == AgentStatus::Active && e.current.role.needs_expertise())
            .filter_map(|(id, e)| {
                let have: BTreeSet<String> = e.current.expertise.iter().map(|t| t.to_lowercase()).collect();
                let overlap = have.intersection(&wanted).count();
                (overlap > 0).then(|| (overlap, id.clone()))
            })
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        ranked.into_iter().map(|(_, id)| id).collect()
    }

    /// Accept a plan only if every assignee is a registered worker and no
    /// worker receives two subtasks.
    pub fn validate_assignment(&self, plan: &DecompositionPlan) -> Result<(), RegistryError> {
        let inner = self.inner.read().unwrap();
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for st in &plan.subtasks {
            let known = AgentId::new(st.assigned_worker.as_str())
                .ok()
                .and_then(|id| inner.agents.get(&id))
                .is_some_and(|e| e.current.role.needs_expertise());
            if !known {
                return Err(RegistryError::UnknownWorker {
                    subtask_id: st.subtask_id.clone(),
                    worker: st.assigned_worker.clone(),
                });
            }
            if let Some(first) = seen.insert(&st.assigned_worker, &st.subtask_id) {
                return Err(RegistryError::DuplicateAssignment {
                    worker: st.assigned_worker.clone(),
                    first: first.to_owned(),
                    second: st.subtask_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn mark_failed(&self, id: &AgentId) -> Result<(), RegistryError> {
        let mut inner = self.inner.write().unwrap();
        let entry = inner.agents.get_mut(id).ok_or_else(|| RegistryError::UnknownAgent(id.clone()))?;
        if entry.current.status != AgentStatus::Failed {
            entry.current.status = AgentStatus::Failed;
            entry.history.push(AgentStatus::Failed);
        }
        Ok(())
    }

    /// Log the crash, restore the initial descriptor and reactivate the
    /// agent with the subscriptions it held when it failed.
    pub fn reinitialize(&self, id: &AgentId, now: Tick, context: Document) -> Result<AgentId, RegistryError> {
        let record = {
            let mut inner = self.inner.write().unwrap();
            let entry = inner.agents.get_mut(id).ok_or_else(|| RegistryError::UnknownAgent(id.clone()))?;
            if entry.current.status != AgentStatus::Failed {
                return Err(RegistryError::NotFailed(id.clone()));
            }
            entry.current.status = AgentStatus::Restarting;
            entry.history.push(AgentStatus::Restarting);
            let record = CrashRecord {
                agent_id: id.clone(),
                tick: now,
                last_message_log_id: entry.last_log_id,
                context_snapshot: context,
            };
            entry.current = entry.initial.clone();
            entry.current.status = AgentStatus::Active;
            entry.history.push(AgentStatus::Active);
            inner.crashes.push(record.clone());
            record
        };
        if let Some(path) = &self.crash_log {
            let mut line =
                record.to_document().canonical_bytes().unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}").into_bytes());
            line.push(b'\n');
            OpenOptions::new().create(true).append(true).open(path)?.write_all(&line)?;
        }
        Ok(id.clone())
    }

    pub fn crash_records(&self) -> Vec<CrashRecord> {
        self.inner.read().unwrap().crashes.clone()
    }

    pub fn crash_count(&self, id: &AgentId) -> usize {
        self.inner.read().unwrap().crashes.iter().filter(|c| &c.agent_id == id).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::contracts::{Difficulty, SubtaskAssignment};

    fn five_workers() -> Registry {
        let reg = Registry::new();
        let tags = [
            vec!["data validation", "accuracy"],
            vec!["creativity", "brand alignment"],
            vec!["navigation", "mapping"],
            vec!["grasping", "manipulation"],
            vec!["perception", "accuracy"],
        ];
        for (i, t) in tags.iter().enumerate() {
            reg.register_agent(AgentDescriptor::new(&format!("Worker_{}", i + 1), Role::Worker, t.iter().copied())).unwrap();
        }
        reg
    }

    fn plan(workers: &[&str]) -> DecompositionPlan {
        DecompositionPlan {
            difficulty: Difficulty::High,
            subtasks: workers
                .iter()
                .enumerate()
                .map(|(i, w)| SubtaskAssignment {
                    subtask_id: format!("ST{}", i + 1),
                    assigned_worker: (*w).to_owned(),
                    task_description: "open the cabinet".into(),
                    focus: vec!["a".into(), "b".into(), "c".into()],
                    depends_on: None,
                })
                .collect(),
        }
    }

    #[test]
    fn registration_rules() {
        let reg = five_workers();
        assert_eq!(reg.active_agents().len(), 5);
        assert!(matches!(
            reg.register_agent(AgentDescriptor::new("Worker_1", Role::Worker, ["x"])),
            Err(RegistryError::DuplicateId(_))
        ));
        assert!(matches!(
            reg.register_agent(AgentDescriptor::new("Worker_6", Role::Worker, Vec::<String>::new())),
            Err(RegistryError::MissingExpertise { .. })
        ));
        reg.register_agent(AgentDescriptor::new("Leader", Role::Leader, Vec::<String>::new())).unwrap();
    }

    #[test]
    fn expertise_ranking() {
        let reg = five_workers();
        assert_eq!(reg.lookup_by_expertise(&["creativity"]), vec![AgentId::from("Worker_2")]);
        assert!(reg.lookup_by_expertise(&["cooking"]).is_empty());
        assert_eq!(reg.lookup_by_expertise(&["accuracy"]), vec![AgentId::from("Worker_1"), AgentId::from("Worker_5")]);
        assert_eq!(reg.lookup_by_expertise(&["accuracy", "perception"])[0], AgentId::from("Worker_5"));
    }

    #[test]
    fn assignment_checks() {
        let reg = five_workers();
        reg.validate_assignment(&plan(&["Worker_1", "Worker_2", "Worker_3"])).unwrap();
        assert!(matches!(
            reg.validate_assignment(&plan(&["Worker_3", "Worker_3"])),
            Err(RegistryError::DuplicateAssignment { .. })
        ));
        assert!(matches!(reg.validate_assignment(&plan(&["Worker_9"])), Err(RegistryError::UnknownWorker { .. })));
    }

    #[test]
    fn fail_and_restart() {
        let reg = five_workers();
        let w2 = AgentId::from("Worker_2");
        assert!(matches!(reg.reinitialize(&w2, Tick(3), Document::Null), Err(RegistryError::NotFailed(_))));
        reg.set_subscriptions(&w2, [Importance::High].into()).unwrap();
        reg.mark_failed(&w2).unwrap();
        assert_eq!(reg.status(&w2), Some(AgentStatus::Failed));
        reg.reinitialize(&w2, Tick(10), Document::object([("phase", Document::from("grasp"))])).unwrap();
        assert_eq!(reg.status(&w2), Some(AgentStatus::Active));
        let visible: Vec<_> = reg.status_history(&w2).into_iter().filter(|s| *s != AgentStatus::Restarting).collect();
        assert_eq!(visible, vec![AgentStatus::Active, AgentStatus::Failed, AgentStatus::Active]);
        assert_eq!(reg.crash_count(&w2), 1);
        assert_eq!(reg.subscriptions(&w2), Some([Importance::High].into()));
    }

    #[test]
    fn crash_log_file_gets_one_line_per_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crash.ndjson");
        let reg = Registry::with_crash_log(&path);
        reg.register_agent(AgentDescriptor::new("Worker_1", Role::Worker, ["x"])).unwrap();
        let id = AgentId::from("Worker_1");
        for t in 0..2 {
            reg.mark_failed(&id).unwrap();
            reg.reinitialize(&id, Tick(t), Document::Null).unwrap();
        }
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"agent_id\":\"Worker_1\""));
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agents.json");
        std::fs::write(
            &path,
            r#"[{"agent_id":"Worker_1","role":"Worker","expertise":["grasping"]},{"agent_id":"Leader","role":"Leader"}]"#,
        )
        .unwrap();
        let descs = Registry::load_config(&path).unwrap();
        let reg = Registry::new();
        reg.register_all(descs).unwrap();
        assert_eq!(reg.agents().len(), 2);
    }
}
