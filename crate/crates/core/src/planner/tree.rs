//! Bounded state-transition trees: validation, scoring, generation from a
//! transition model, and expected-value action selection.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::schema::{Checker, Problem, SchemaViolation};
use crate::protocol::Document;

use super::PlannerError;

/// Maximum number of state layers, root included.
pub const MAX_LAYERS: usize = 5;
/// Discount applied to child values.
pub const DISCOUNT: f64 = 0.9;
/// Sibling probabilities must sum to one within this tolerance.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;
/// Selected when the root is already a goal.
pub const NO_OP: &str = "no_op";

const TREE: &str = "StateTree";
const CHOICE: &str = "ActionChoice";

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub action: String,
    pub probability: f64,
    pub next_state: StateNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateNode {
    pub state: String,
    pub score: f64,
    pub is_goal: bool,
    pub transitions: Vec<Transition>,
}

impl StateNode {
    pub fn leaf(state: impl Into<String>, score: f64, is_goal: bool) -> Self {
        Self { state: state.into(), score, is_goal, transitions: Vec::new() }
    }

    pub fn with(mut self, action: impl Into<String>, probability: f64, next: StateNode) -> Self {
        self.transitions.push(Transition { action: action.into(), probability, next_state: next });
        self
    }

    /// Number of state layers in this subtree.
    pub fn layers(&self) -> usize {
        1 + self.transitions.iter().map(|t| t.next_state.layers()).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        1 + self.transitions.iter().map(|t| t.next_state.node_count()).sum::<usize>()
    }

    fn to_document(&self) -> Document {
        Document::object([
            ("state", Document::from(self.state.as_str())),
            ("score", Document::from(self.score)),
            ("is_goal", Document::from(self.is_goal)),
            (
                "transitions",
                Document::Array(
                    self.transitions
                        .iter()
                        .map(|t| {
                            Document::object([
                                ("action", Document::from(t.action.as_str())),
                                ("probability", Document::from(t.probability)),
                                ("next_state", t.next_state.to_document()),
                            ])
                        })
                        .collect(),
                ),
            ),
        ])
    }

    /// Discounted expected value: the node's score plus the discounted
    /// probability-weighted value of its children.
    pub fn value(&self, discount: f64) -> f64 {
        if self.is_goal || self.transitions.is_empty() {
            return self.score;
        }
        self.score + discount * self.transitions.iter().map(|t| t.probability * t.next_state.value(discount)).sum::<f64>()
    }

    fn normalize(&mut self) {
        let total: f64 = self.transitions.iter().map(|t| t.probability).sum();
        if total > 0.0 {
            self.transitions.iter_mut().for_each(|t| t.probability /= total);
        }
        self.transitions.iter_mut().for_each(|t| t.next_state.normalize());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTree {
    pub root: StateNode,
}

impl StateTree {
    pub fn new(root: StateNode) -> Self {
        Self { root }
    }

    pub fn layers(&self) -> usize {
        self.root.layers()
    }

    /// `{"next_state": <root>}`.
    pub fn to_document(&self) -> Document {
        Document::object([("next_state", self.root.to_document())])
    }

    /// Parse and check every invariant; sibling probabilities that sum to
    /// less than one are rescaled to sum to one.
    pub fn from_document(doc: &Document, vocab: Option<&BTreeSet<String>>) -> Result<Self, SchemaViolation> {
        let mut ck = Checker::new();
        let mut root = None;
        if let Some(mut f) = ck.object("", doc) {
            if let Some(d) = f.req(&mut ck, "next_state") {
                root = parse_node(&mut ck, "next_state", d, 1, vocab);
            }
            ck.close(f);
        }
        ck.finish(TREE)?;
        let mut tree = Self { root: root.expect("checked") };
        tree.root.normalize();
        Ok(tree)
    }

    /// Check the invariants of an already-built tree (probabilities must
    /// already be normalized).
    pub fn validate(&self, vocab: Option<&BTreeSet<String>>) -> Result<(), SchemaViolation> {
        let mut ck = Checker::new();
        check_node(&mut ck, "next_state", &self.root, 1, vocab);
        ck.finish(TREE)
    }
}

/// Parse `document` as a state tree and enumerate every violation.
pub fn validate_state_tree(document: &Document, vocab: Option<&BTreeSet<String>>) -> Result<StateTree, SchemaViolation> {
    StateTree::from_document(document, vocab)
}

fn parse_node(ck: &mut Checker, path: &str, doc: &Document, layer: usize, vocab: Option<&BTreeSet<String>>) -> Option<StateNode> {
    let mut f = ck.object(path, doc)?;
    let before = ck_len(ck);
    let state = f.req(ck, "state").and_then(|d| ck.string(&format!("{path}.state"), d)).map(str::to_owned);
    let score = f.req(ck, "score").and_then(|d| ck.number(&format!("{path}.score"), d));
    if let Some(s) = score {
        if !(0.0..=1.0).contains(&s) {
            ck.invalid(format!("{path}.score"), format!("score {s} outside [0, 1]"));
        }
    }
    let is_goal = f.req(ck, "is_goal").and_then(|d| ck.boolean(&format!("{path}.is_goal"), d));
    let mut transitions = Vec::new();
    if let Some(items) = f.req(ck, "transitions").and_then(|d| ck.array(&format!("{path}.transitions"), d)) {
        if is_goal == Some(true) && !items.is_empty() {
            ck.invalid(format!("{path}.transitions"), "goal states have no transitions");
        }
        if !items.is_empty() && layer >= MAX_LAYERS {
            ck.invalid(format!("{path}.transitions"), format!("tree deeper than {MAX_LAYERS} layers"));
        }
        let mut total = 0.0;
        for (i, item) in items.iter().enumerate() {
            let tp = format!("{path}.transitions[{i}]");
            let Some(mut t) = ck.object(&tp, item) else { continue };
            let action = t.req(ck, "action").and_then(|d| ck.non_empty_string(&format!("{tp}.action"), d)).map(str::to_owned);
            if let (Some(a), Some(v)) = (&action, vocab) {
                if !v.contains(a) {
                    ck.invalid(format!("{tp}.action"), format!("{a:?} is not an available action"));
                }
            }
            let probability = t.req(ck, "probability").and_then(|d| ck.number(&format!("{tp}.probability"), d));
            if let Some(p) = probability {
                if !(0.0..=1.0).contains(&p) {
                    ck.invalid(format!("{tp}.probability"), format!("probability {p} outside [0, 1]"));
                }
                total += p;
            }
            let next = t.req(ck, "next_state").and_then(|d| parse_node(ck, &format!("{tp}.next_state"), d, layer + 1, vocab));
            ck.close(t);
            if let (Some(action), Some(probability), Some(next_state)) = (action, probability, next) {
                transitions.push(Transition { action, probability, next_state });
            }
        }
        if !items.is_empty() {
            if total > 1.0 + PROBABILITY_TOLERANCE {
                ck.invalid(format!("{path}.transitions"), format!("sibling probabilities sum to {total} > 1"));
            } else if total <= 0.0 {
                ck.invalid(format!("{path}.transitions"), "sibling probabilities sum to zero");
            }
        }
    }
    ck.close(f);
    (ck_len(ck) == before).then(|| StateNode {
        state: state.unwrap_or_default(),
        score: score.unwrap_or_default(),
        is_goal: is_goal.unwrap_or_default(),
        transitions,
    })
}

fn ck_len(ck: &Checker) -> usize {
    // Only used to detect whether a subtree added violations.
    ck.count()
}

fn check_node(ck: &mut Checker, path: &str, node: &StateNode, layer: usize, vocab: Option<&BTreeSet<String>>) {
    if !(0.0..=1.0).contains(&node.score) {
        ck.invalid(format!("{path}.score"), format!("score {} outside [0, 1]", node.score));
    }
    if node.is_goal && !node.transitions.is_empty() {
        ck.invalid(format!("{path}.transitions"), "goal states have no transitions");
    }
    if !node.transitions.is_empty() {
        if layer >= MAX_LAYERS {
            ck.invalid(format!("{path}.transitions"), format!("tree deeper than {MAX_LAYERS} layers"));
        }
        let total: f64 = node.transitions.iter().map(|t| t.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            ck.invalid(format!("{path}.transitions"), format!("sibling probabilities sum to {total}"));
        }
    }
    for (i, t) in node.transitions.iter().enumerate() {
        let tp = format!("{path}.transitions[{i}]");
        if !(0.0..=1.0).contains(&t.probability) {
            ck.invalid(format!("{tp}.probability"), format!("probability {} outside [0, 1]", t.probability));
        }
        if let Some(v) = vocab {
            if !v.contains(&t.action) {
                ck.invalid(format!("{tp}.action"), format!("{:?} is not an available action", t.action));
            }
        }
        check_node(ck, &format!("{tp}.next_state"), &t.next_state, layer + 1, vocab);
    }
}

/// The four scoring criteria, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateFactors {
    pub goal_proximity: f64,
    pub transition_possibility: f64,
    pub safety: f64,
    pub resource_efficiency: f64,
}

impl StateFactors {
    /// Factors from raw observations: an unsafe flag zeroes safety, and a
    /// resource cost in [0, 1] is turned into efficiency `1 − cost`.
    pub fn from_raw(goal_proximity: f64, transition_possibility: f64, unsafe_flag: bool, resource_cost: f64) -> Self {
        Self {
            goal_proximity,
            transition_possibility,
            safety: if unsafe_flag { 0.0 } else { 1.0 },
            resource_efficiency: 1.0 - resource_cost.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreWeights {
    pub goal: f64,
    pub transition: f64,
    pub safety: f64,
    pub resource: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { goal: 0.5, transition: 0.2, safety: 0.2, resource: 0.1 }
    }
}

/// Weighted sum of the clamped factors, clamped to [0, 1].
pub fn score_state(f: &StateFactors, w: &ScoreWeights) -> f64 {
    let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let s = w.goal * c(f.goal_proximity)
        + w.transition * c(f.transition_possibility)
        + w.safety * c(f.safety)
        + w.resource * c(f.resource_efficiency);
    if s.is_nan() {
        0.0
    } else {
        s.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionChoice {
    pub selected_action: String,
    pub reason: String,
}

impl ActionChoice {
    pub fn to_document(&self) -> Document {
        Document::object([
            ("selected_action", Document::from(self.selected_action.as_str())),
            ("reason", Document::from(self.reason.as_str())),
        ])
    }

    pub fn from_document(doc: &Document, vocab: Option<&BTreeSet<String>>) -> Result<Self, SchemaViolation> {
        let mut ck = Checker::new();
        let (mut action, mut reason) = (None, None);
        if let Some(mut f) = ck.object("", doc) {
            action = f.req(&mut ck, "selected_action").and_then(|d| ck.non_empty_string("selected_action", d)).map(str::to_owned);
            if let (Some(a), Some(v)) = (&action, vocab) {
                if !v.contains(a) && a != NO_OP {
                    ck.push("selected_action", Problem::Invalid(format!("{a:?} is not an available action")));
                }
            }
            reason = f.req(&mut ck, "reason").and_then(|d| ck.non_empty_string("reason", d)).map(str::to_owned);
            ck.close(f);
        }
        ck.finish(CHOICE)?;
        Ok(Self { selected_action: action.expect("checked"), reason: reason.expect("checked") })
    }
}

/// Expected value of taking `action` at the root: the probability-weighted
/// mean of its outcome values (plain mean if all its probabilities are 0).
pub fn action_values(tree: &StateTree, discount: f64) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for t in &tree.root.transitions {
        let v = t.next_state.value(discount);
        let e = acc.entry(t.action.clone()).or_default();
        e.0 += t.probability * v;
        e.1 += t.probability;
        e.2 += v;
        e.3 += 1;
    }
    acc.into_iter().map(|(a, (pv, p, v, n))| (a, if p > 0.0 { pv / p } else { v / n as f64 })).collect()
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Pick the root action with the highest expected discounted value; among
/// (numerically) equal values the lexicographically smallest action wins.
pub fn select_action(tree: &StateTree, available: &[String]) -> Result<ActionChoice, PlannerError> {
    select_action_with(tree, available, DISCOUNT)
}

pub fn select_action_with(tree: &StateTree, available: &[String], discount: f64) -> Result<ActionChoice, PlannerError> {
    if tree.root.is_goal {
        return Ok(ActionChoice { selected_action: NO_OP.to_owned(), reason: "current state already satisfies the goal".into() });
    }
    if available.is_empty() || tree.root.transitions.is_empty() {
        return Err(PlannerError::EmptyActionSet);
    }
    let mut best: Option<(String, f64)> = None;
    // BTreeMap iteration is ascending, so keeping the first of equal values
    // implements the lexicographic tie-break.
    for (action, v) in action_values(tree, discount) {
        match &best {
            Some((_, bv)) if v <= *bv || nearly_equal(v, *bv) => {}
            _ => best = Some((action, v)),
        }
    }
    let (action, value) = best.expect("root has transitions");
    if !available.contains(&action) {
        return Err(PlannerError::Schema(SchemaViolation::single(
            CHOICE,
            "selected_action",
            Problem::Invalid(format!("{action:?} is not an available action")),
        )));
    }
    Ok(ActionChoice { reason: format!("highest expected value {value:.6} among root actions"), selected_action: action })
}

/// Source of transitions for scripted tree generation.
pub trait TransitionModel {
    fn is_goal(&self, state: &str) -> bool;
    /// Actions that can be attempted in `state`.
    fn applicable(&self, state: &str) -> Vec<String>;
    /// Possible results of `action` in `state` with their probabilities.
    fn outcomes(&self, state: &str, action: &str) -> Vec<(String, f64)>;
    fn factors(&self, state: &str) -> StateFactors;
    /// Branches for which this returns true are pruned.
    fn is_unsafe(&self, _state: &str, _action: &str) -> bool {
        false
    }
}

/// Expand `model` from `current` for up to `max_layers` layers. Each
/// applicable, safe action in `available` is equally likely to be chosen;
/// its outcomes keep their model probabilities. Sibling probabilities are
/// normalized after pruning.
pub fn generate_state_tree(
    current: &str,
    available: &[String],
    model: &dyn TransitionModel,
    max_layers: usize,
    weights: &ScoreWeights,
) -> Result<StateTree, PlannerError> {
    if available.is_empty() {
        return Err(PlannerError::EmptyActionSet);
    }
    let max_layers = max_layers.clamp(1, MAX_LAYERS);
    let mut root = expand(current, 1, available, model, max_layers, weights);
    root.normalize();
    Ok(StateTree { root })
}

fn expand(
    state: &str,
    layer: usize,
    available: &[String],
    model: &dyn TransitionModel,
    max_layers: usize,
    weights: &ScoreWeights,
) -> StateNode {
    let is_goal = model.is_goal(state);
    let mut node = StateNode::leaf(state, score_state(&model.factors(state), weights), is_goal);
    if is_goal || layer >= max_layers {
        return node;
    }
    let mut actions: Vec<String> =
        model.applicable(state).into_iter().filter(|a| available.contains(a) && !model.is_unsafe(state, a)).collect();
    actions.sort();
    actions.dedup();
    let share = 1.0 / actions.len().max(1) as f64;
    for action in actions {
        for (next, p) in model.outcomes(state, &action) {
            if p > 0.0 {
                let child = expand(&next, layer + 1, available, model, max_layers, weights);
                node.transitions.push(Transition { action: action.clone(), probability: share * p, next_state: child });
            }
        }
    }
    node
}
