//! Compilation of a decomposition plan into a DAG of state nodes joined by
//! action nodes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::agents::contracts::DecompositionPlan;
use crate::protocol::Document;

use super::PlannerError;

pub const START_STATE: &str = "start_state";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    State,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagNode {
    pub node_id: String,
    pub kind: NodeKind,
    pub label: String,
    /// For action nodes, the subtask that produced them.
    pub subtask_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtnDag {
    nodes: BTreeMap<String, DagNode>,
    edges: Vec<(String, String)>,
    root: String,
}

impl HtnDag {
    pub fn root(&self) -> &DagNode {
        &self.nodes[&self.root]
    }

    pub fn node(&self, id: &str) -> Option<&DagNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DagNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn state_count(&self) -> usize {
        self.nodes.values().filter(|n| n.kind == NodeKind::State).count()
    }

    pub fn action_count(&self) -> usize {
        self.nodes.values().filter(|n| n.kind == NodeKind::Action).count()
    }

    pub fn predecessors(&self, id: &str) -> Vec<&str> {
        self.edges.iter().filter(|(_, to)| to == id).map(|(from, _)| from.as_str()).collect()
    }

    pub fn successors(&self, id: &str) -> Vec<&str> {
        self.edges.iter().filter(|(from, _)| from == id).map(|(_, to)| to.as_str()).collect()
    }

    /// Kahn's algorithm; ready nodes are taken in id order for determinism.
    pub fn topological_order(&self) -> Result<Vec<&DagNode>, PlannerError> {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for (_, to) in &self.edges {
            *indegree.get_mut(to.as_str()).expect("edge endpoints exist") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(next) = ready.pop_first() {
            order.push(&self.nodes[next]);
            for succ in self.successors(next) {
                let d = indegree.get_mut(succ).expect("edge endpoints exist");
                *d -= 1;
                if *d == 0 {
                    ready.insert(succ);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = indegree.into_iter().filter(|(_, d)| *d > 0).map(|(k, _)| k.to_owned()).collect();
            return Err(PlannerError::CycleDetected(stuck));
        }
        Ok(order)
    }

    /// Action labels in a valid execution order.
    pub fn actions_in_order(&self) -> Vec<&DagNode> {
        self.topological_order().expect("built DAGs are acyclic").into_iter().filter(|n| n.kind == NodeKind::Action).collect()
    }

    /// State nodes reachable once the actions in `done` have completed.
    pub fn reached_states(&self, done: &BTreeSet<String>) -> BTreeSet<String> {
        let mut reached = BTreeSet::new();
        for node in self.topological_order().expect("built DAGs are acyclic") {
            if node.kind != NodeKind::State {
                continue;
            }
            let preds = self.predecessors(&node.node_id);
            let ok = preds.iter().all(|p| match self.nodes[*p].kind {
                NodeKind::Action => done.contains(*p),
                NodeKind::State => reached.contains(*p),
            });
            if ok {
                reached.insert(node.node_id.clone());
            }
        }
        reached
    }

    /// Pending action nodes whose source state has been reached.
    pub fn frontier(&self, done: &BTreeSet<String>) -> Vec<&DagNode> {
        let reached = self.reached_states(done);
        self.actions_in_order()
            .into_iter()
            .filter(|a| !done.contains(&a.node_id))
            .filter(|a| self.predecessors(&a.node_id).iter().all(|p| reached.contains(*p)))
            .collect()
    }

    pub fn to_document(&self) -> Document {
        Document::object([
            ("root", Document::from(self.root.as_str())),
            (
                "nodes",
                Document::Array(
                    self.nodes
                        .values()
                        .map(|n| {
                            Document::object([
                                ("node_id", Document::from(n.node_id.as_str())),
                                ("kind", Document::from(if n.kind == NodeKind::State { "state" } else { "action" })),
                                ("label", Document::from(n.label.as_str())),
                            ])
                        })
                        .collect(),
                ),
            ),
            (
                "edges",
                Document::Array(
                    self.edges
                        .iter()
                        .map(|(a, b)| Document::Array(vec![Document::from(a.as_str()), Document::from(b.as_str())]))
                        .collect(),
                ),
            ),
        ])
    }
}

/// Order ids like "ST2" before "ST10": shared prefix, then numeric suffix.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    let split = |s: &str| {
        let digits = s.len() - s.bytes().rev().take_while(u8::is_ascii_digit).count();
        let (head, tail) = s.split_at(digits);
        (head.to_owned(), tail.parse::<u64>().ok())
    };
    split(a).cmp(&split(b)).then_with(|| a.cmp(b))
}

/// Compile `plan` into a DAG. Subtasks run in id order unless they carry an
/// explicit dependency list. Every subtask description must name an action
/// in `vocab` (any label is accepted when `vocab` is empty).
pub fn build_htn_dag(plan: &DecompositionPlan, vocab: &[String]) -> Result<HtnDag, PlannerError> {
    let mut subtasks: Vec<_> = plan.subtasks.iter().collect();
    subtasks.sort_by(|a, b| natural_cmp(&a.subtask_id, &b.subtask_id));
    for st in &subtasks {
        if !vocab.is_empty() && !vocab.contains(&st.task_description) {
            return Err(PlannerError::UnknownAction(st.task_description.clone()));
        }
    }
    let ids: BTreeSet<&str> = subtasks.iter().map(|s| s.subtask_id.as_str()).collect();
    let mut deps: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (i, st) in subtasks.iter().enumerate() {
        let list: Vec<&str> = match &st.depends_on {
            Some(list) => list.iter().map(String::as_str).collect(),
            None if i == 0 => Vec::new(),
            None => vec![subtasks[i - 1].subtask_id.as_str()],
        };
        if let Some(bad) = list.iter().find(|d| !ids.contains(*d)) {
            return Err(PlannerError::UnknownSubtask((*bad).to_owned()));
        }
        deps.insert(&st.subtask_id, list);
    }

    // Order subtasks so that dependencies come first.
    let mut remaining: BTreeMap<&str, usize> = deps.iter().map(|(k, v)| (*k, v.len())).collect();
    let mut queue: VecDeque<&str> = subtasks.iter().map(|s| s.subtask_id.as_str()).filter(|id| remaining[id] == 0).collect();
    let mut order = Vec::new();
    while let Some(id) = queue.pop_front() {
        order.push(id);
        for st in &subtasks {
            let sid = st.subtask_id.as_str();
            if deps[sid].contains(&id) {
                let r = remaining.get_mut(sid).expect("known id");
                *r -= 1;
                if *r == 0 {
                    queue.push_back(sid);
                }
            }
        }
    }
    if order.len() != subtasks.len() {
        let stuck = remaining.into_iter().filter(|(_, r)| *r > 0).map(|(k, _)| k.to_owned()).collect();
        return Err(PlannerError::CycleDetected(stuck));
    }

    let by_id: BTreeMap<&str, _> = subtasks.iter().map(|s| (s.subtask_id.as_str(), *s)).collect();
    let mut dag = HtnDag { nodes: BTreeMap::new(), edges: Vec::new(), root: START_STATE.to_owned() };
    let add = |dag: &mut HtnDag, id: String, kind, label: String, subtask_id: Option<String>| {
        dag.nodes.insert(id.clone(), DagNode { node_id: id, kind, label, subtask_id });
    };
    add(&mut dag, START_STATE.to_owned(), NodeKind::State, START_STATE.to_owned(), None);
    for id in order {
        let st = by_id[id];
        let pre = match deps[id].as_slice() {
            [] => START_STATE.to_owned(),
            [one] => format!("after:{one}"),
            many => {
                let join = format!("join:{id}");
                add(&mut dag, join.clone(), NodeKind::State, format!("ready for {}", st.task_description), None);
                for d in many {
                    dag.edges.push((format!("after:{d}"), join.clone()));
                }
                join
            }
        };
        let action = format!("do:{id}");
        let post = format!("after:{id}");
        add(&mut dag, action.clone(), NodeKind::Action, st.task_description.clone(), Some(id.to_owned()));
        add(&mut dag, post.clone(), NodeKind::State, format!("{} done", st.task_description), None);
        dag.edges.push((pre, action.clone()));
        dag.edges.push((action, post));
    }
    dag.topological_order()?;
    Ok(dag)
}
