//! Reference implementations written independently of the library code,
//! plus random instance generators. Shared by the integration tests and
//! the acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cortex_core::bus::Bus;
use cortex_core::estimator::{forward_filter, BeliefState, DbnParams, Episode};
use cortex_core::linalg::Matrix;
use cortex_core::planner::{StateNode, StateTree, Transition, DISCOUNT, MAX_LAYERS};
use cortex_core::protocol::{AgentId, Codec, Document, Envelope, Importance, MessageHeader, Payload, PayloadKind};
use cortex_core::reactive::{Policy, ReactiveController, ReactiveGains};
use cortex_core::registry::{AgentDescriptor, Registry, Role};
use cortex_core::{Tick, VirtualClock};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- CRC-32

/// Reflected CRC-32 (polynomial 0xEDB88320) with a 256-entry table.
pub fn crc32_oracle(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 == 1 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ u32::from(b)) & 0xff) as usize] ^ (crc >> 8);
    }
    !crc
}

// ------------------------------------------------------------- envelopes

const TEXT_POOL: &[&str] =
    &["a", "Z", "7", " ", "_", "\"", "\\", "/", "\n", "\t", "é", "ß", "→", "✓", "漢", "🙂", "{", "}", ":", ","];
const AGENTS: &[&str] = &["robot_03", "Worker_1", "Worker_12", "Leader", "HM", "inspector_2", "Provider_7"];
const ACTIONS: &[&str] = &["grasp cube", "lift", "move to table", "open cabinet", "place at user", "look"];

pub fn random_text(r: &mut impl Rng, max_len: usize) -> String {
    let n = r.random_range(0..=max_len);
    (0..n).map(|_| *TEXT_POOL.choose(r).unwrap()).collect()
}

/// A finite float spread over many magnitudes.
pub fn random_float(r: &mut impl Rng) -> f64 {
    let mantissa: f64 = r.random_range(-1.0..1.0);
    mantissa * 10f64.powi(r.random_range(-12..12))
}

fn random_timestamp(r: &mut impl Rng) -> String {
    let frac = match r.random_range(0..3) {
        0 => String::new(),
        1 => format!(".{:03}", r.random_range(0..1000)),
        _ => format!(".{:06}", r.random_range(0..1_000_000)),
    };
    format!(
        "20{:02}-{:02}-{:02}T{:02}:{:02}:{:02}{frac}Z",
        r.random_range(20..40),
        r.random_range(1..=12),
        r.random_range(1..=28),
        r.random_range(0..24),
        r.random_range(0..60),
        r.random_range(0..60)
    )
}

fn random_body(r: &mut impl Rng) -> Payload {
    match r.random_range(0..5) {
        0 => Payload::new(PayloadKind::IntermediateText, Document::object([("text", Document::from(random_text(r, 40)))])),
        1 => {
            let n = r.random_range(0..6);
            let acts: Vec<String> = (0..n).map(|_| ACTIONS.choose(r).unwrap().to_string()).collect();
            Payload::new(PayloadKind::ActionHistory, Document::object([("actions", Document::strings(&acts))]))
        }
        2 => {
            let n = r.random_range(0..8);
            let values: Vec<f64> = (0..n).map(|_| random_float(r)).collect();
            Payload::new(
                PayloadKind::MotionPrimitive,
                Document::object([
                    ("primitive", Document::from(format!("move_{}", r.random_range(0..9)))),
                    ("values", Document::floats(&values)),
                ]),
            )
        }
        3 => {
            let error = if r.random_bool(0.5) { Document::Null } else { Document::from(random_text(r, 20)) };
            Payload::new(
                PayloadKind::ActionFeedback,
                Document::object([
                    ("action", Document::from(*ACTIONS.choose(r).unwrap())),
                    ("success", Document::from(r.random_bool(0.5))),
                    ("error", error),
                    ("tick", Document::from(r.random_range(0..1_000_000u64))),
                ]),
            )
        }
        _ => {
            let sensors = Document::object([("camera", Document::from(random_text(r, 12))), ("lidar", Document::from("clear"))]);
            Payload::new(
                PayloadKind::HighLevelCommand,
                Document::object([
                    ("goal", Document::from(format!("goal {}", r.random_range(0..100)))),
                    ("sensors", sensors),
                    ("feedback", Document::Null),
                ]),
            )
        }
    }
}

pub fn random_envelope(r: &mut impl Rng, codec: &Codec) -> Envelope {
    let header =
        MessageHeader::parse(&random_timestamp(r), AGENTS.choose(r).unwrap(), Importance::ALL.choose(r).unwrap().as_str())
            .expect("generated header is valid");
    codec.seal(header, random_body(r)).expect("generated payload is valid")
}

// ------------------------------------------------------------------- bus

/// Mirror of one subscriber's view: FIFO queues per priority, its channel
/// set and whether it may currently receive.
#[derive(Debug, Clone)]
struct ModelInbox {
    queues: [VecDeque<u64>; 3],
    subs: BTreeSet<Importance>,
    active: bool,
}

/// Run one randomized discrete-event schedule against a fresh bus and
/// compare every observable against a queue model. Returns the number of
/// deliveries on success.
pub fn bus_scenario(seed: u64, steps: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    let registry = Arc::new(Registry::new());
    let agents: Vec<(&str, Role)> = vec![
        ("Leader", Role::Leader),
        ("Worker_1", Role::Worker),
        ("Worker_2", Role::Worker),
        ("Provider_1", Role::Provider),
        ("inspector_1", Role::Inspector),
    ];
    let mut model: BTreeMap<AgentId, ModelInbox> = BTreeMap::new();
    for (id, role) in &agents {
        registry.register_agent(AgentDescriptor::new(id, *role, ["general"])).map_err(|e| e.to_string())?;
        model.insert(
            AgentId::from(*id),
            ModelInbox { queues: Default::default(), subs: role.default_subscriptions(), active: true },
        );
    }
    let ids: Vec<AgentId> = model.keys().cloned().collect();
    let bus = Bus::new(Arc::clone(&registry), VirtualClock::new(), Codec::default());
    let mut expected_recipients: BTreeMap<u64, BTreeSet<AgentId>> = BTreeMap::new();
    let mut delivered: BTreeMap<u64, Vec<AgentId>> = BTreeMap::new();
    let mut deliveries = 0;

    let mut pull = |bus: &Bus, model: &mut BTreeMap<AgentId, ModelInbox>, who: &AgentId, step: usize| -> Result<bool, String> {
        let got = bus.next_message(who);
        let inbox = model.get_mut(who).unwrap();
        let want_level = if inbox.active {
            Importance::ALL.into_iter().find(|l| inbox.subs.contains(l) && !inbox.queues[l.rank()].is_empty())
        } else {
            None
        };
        match (got, want_level) {
            (None, None) => Ok(false),
            (Some(env), Some(level)) => {
                if env.importance() != level {
                    return Err(format!("step {step}: {who} got {} while {level} was queued", env.importance()));
                }
                for higher in Importance::ALL.into_iter().take(level.rank()) {
                    if inbox.subs.contains(&higher) && !inbox.queues[higher.rank()].is_empty() {
                        return Err(format!("step {step}: priority inversion for {who}"));
                    }
                }
                let head = inbox.queues[level.rank()].pop_front().unwrap();
                if env.log_id.0 != head {
                    return Err(format!("step {step}: FIFO broken for {who} on {level}: got {} expected {head}", env.log_id.0));
                }
                delivered.entry(head).or_default().push(who.clone());
                deliveries += 1;
                Ok(true)
            }
            (got, want) => Err(format!("step {step}: {who} got {:?}, model expected {want:?}", got.map(|e| e.log_id))),
        }
    };

    for step in 0..steps {
        bus.clock().advance();
        let who = ids.choose(&mut r).unwrap().clone();
        match r.random_range(0..100) {
            0..40 => {
                let level = *Importance::ALL.choose(&mut r).unwrap();
                let body = Document::object([("text", Document::from(format!("s{step}")))]);
                let receipt = bus.send(&who, level, PayloadKind::IntermediateText, body).map_err(|e| e.to_string())?;
                let mut want = BTreeSet::new();
                for (id, inbox) in model.iter_mut() {
                    if *id != who && inbox.subs.contains(&level) {
                        inbox.queues[level.rank()].push_back(receipt.log_id.0);
                        want.insert(id.clone());
                    }
                }
                let got: BTreeSet<AgentId> = receipt.recipients.iter().cloned().collect();
                if got != want {
                    return Err(format!("step {step}: recipients {got:?}, expected {want:?}"));
                }
                expected_recipients.insert(receipt.log_id.0, want);
            }
            40..75 => {
                pull(&bus, &mut model, &who, step)?;
            }
            75..85 => {
                let subs: BTreeSet<Importance> = Importance::ALL.into_iter().filter(|_| r.random_bool(0.6)).collect();
                bus.reassign_channel(&who, subs.clone()).map_err(|e| e.to_string())?;
                model.get_mut(&who).unwrap().subs = subs;
            }
            85..93 => {
                registry.mark_failed(&who).map_err(|e| e.to_string())?;
                model.get_mut(&who).unwrap().active = false;
            }
            _ => {
                let inbox = model.get_mut(&who).unwrap();
                if !inbox.active {
                    registry.reinitialize(&who, bus.clock().now(), Document::Null).map_err(|e| e.to_string())?;
                    inbox.active = true;
                }
            }
        }
    }

    // Bring everyone back on every channel and drain.
    for id in &ids {
        let inbox = model.get_mut(id).unwrap();
        if !inbox.active {
            registry.reinitialize(id, Tick(steps as u64 + 1), Document::Null).map_err(|e| e.to_string())?;
            inbox.active = true;
        }
        bus.reassign_channel(id, Importance::ALL.into()).map_err(|e| e.to_string())?;
        inbox.subs = Importance::ALL.into();
        while pull(&bus, &mut model, id, steps)? {}
        if bus.pending(id) != 0 {
            return Err(format!("{id} still has {} queued messages", bus.pending(id)));
        }
    }
    for (log, want) in &expected_recipients {
        let got = delivered.get(log).cloned().unwrap_or_default();
        let unique: BTreeSet<AgentId> = got.iter().cloned().collect();
        if unique.len() != got.len() {
            return Err(format!("message {log} delivered twice to one subscriber"));
        }
        if &unique != want {
            return Err(format!("message {log} reached {unique:?}, expected {want:?}"));
        }
    }
    Ok(deliveries)
}

// ---------------------------------------------------------------- memory

/// `m_t = (1 − α)·m_{t−1} + tanh(W·[s; z; m_{t−1}] + b)` written out with
/// plain loops over row vectors.
pub fn memory_unrolled(
    weights: &[Vec<f64>],
    bias: &[f64],
    alpha: f64,
    m0: &[f64],
    inputs: &[(Vec<f64>, Vec<f64>)],
) -> Vec<Vec<f64>> {
    let mut m = m0.to_vec();
    let mut out = Vec::new();
    for (s, z) in inputs {
        let x: Vec<f64> = s.iter().chain(z.iter()).chain(m.iter()).copied().collect();
        let mut next = vec![0.0; m.len()];
        for i in 0..m.len() {
            let mut acc = bias[i];
            for (j, xj) in x.iter().enumerate() {
                acc += weights[i][j] * xj;
            }
            next[i] = (1.0 - alpha) * m[i] + acc.tanh();
        }
        m = next;
        out.push(m.clone());
    }
    out
}

// --------------------------------------------------------------- planner

pub const TREE_VOCAB: &[&str] = &["close", "grasp", "lift", "open", "place"];

fn random_node(r: &mut impl Rng, layer: usize, max_layers: usize, max_branch: usize, label: &mut usize) -> StateNode {
    *label += 1;
    let name = format!("s{label}");
    let score = r.random_range(0.0..=1.0);
    let leaf = layer >= max_layers || (layer > 1 && r.random_bool(0.3));
    if leaf {
        return StateNode::leaf(name, score, r.random_bool(0.2));
    }
    let k = r.random_range(1..=max_branch);
    let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut node = StateNode::leaf(name, score, false);
    for w in weights {
        let action = *TREE_VOCAB.choose(r).unwrap();
        let child = random_node(r, layer + 1, max_layers, max_branch, label);
        node = node.with(action, w / total, child);
    }
    node
}

/// A valid tree with at most `max_layers` state layers and `max_branch`
/// transitions per node; the root is never a goal and always branches.
pub fn random_tree(r: &mut impl Rng, max_layers: usize, max_branch: usize) -> StateTree {
    let mut label = 0;
    let layers = r.random_range(2..=max_layers.max(2));
    StateTree::new(random_node(r, 1, layers, max_branch, &mut label))
}

/// Sum over every root-to-node path of `P(path) · γ^depth · score`.
fn path_value(node: &StateNode, prob: f64, depth: i32, acc: &mut f64) {
    *acc += prob * DISCOUNT.powi(depth) * node.score;
    if node.is_goal {
        return;
    }
    for t in &node.transitions {
        path_value(&t.next_state, prob * t.probability, depth + 1, acc);
    }
}

/// Expected value of every root action by path enumeration, and the argmax
/// with ties (within 1e−12) resolved to the smallest action name.
pub fn exhaustive_best(tree: &StateTree) -> (String, BTreeMap<String, f64>) {
    let mut sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for t in &tree.root.transitions {
        let mut v = 0.0;
        path_value(&t.next_state, 1.0, 0, &mut v);
        let e = sums.entry(t.action.clone()).or_default();
        e.0 += t.probability * v;
        e.1 += t.probability;
    }
    let values: BTreeMap<String, f64> = sums.into_iter().map(|(a, (pv, p))| (a, pv / p)).collect();
    let max = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = values.iter().find(|(_, v)| **v >= max - 1e-12).map(|(a, _)| a.clone()).unwrap();
    (best, values)
}

fn node_paths(node: &StateNode, prefix: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, usize)>) {
    out.push((prefix.clone(), node.transitions.len()));
    for (i, t) in node.transitions.iter().enumerate() {
        prefix.push(i);
        node_paths(&t.next_state, prefix, out);
        prefix.pop();
    }
}

/// A random node with at least `min_branch` transitions.
fn pick<'a>(r: &mut impl Rng, tree: &'a mut StateTree, min_branch: usize) -> Option<&'a mut StateNode> {
    let mut all = Vec::new();
    node_paths(&tree.root, &mut Vec::new(), &mut all);
    let candidates: Vec<&Vec<usize>> = all.iter().filter(|(_, k)| *k >= min_branch).map(|(p, _)| p).collect();
    let path = candidates.choose(r)?;
    let mut node = &mut tree.root;
    for &i in path.iter() {
        node = &mut node.transitions[i].next_state;
    }
    Some(node)
}

/// Apply one random mutation that breaks a tree invariant. Returns a label
/// for the broken rule.
pub fn mutate_tree(r: &mut impl Rng, tree: &mut StateTree) -> &'static str {
    loop {
        match r.random_range(0..6) {
            0 => {
                let n = pick(r, tree, 0).unwrap();
                n.score = if r.random_bool(0.5) { -r.random_range(0.001..5.0) } else { 1.0 + r.random_range(0.001..5.0) };
                return "score range";
            }
            1 => {
                if let Some(n) = pick(r, tree, 1) {
                    n.is_goal = true;
                    return "goal has transitions";
                }
            }
            2 => {
                let n = pick(r, tree, 1).unwrap();
                let i = r.random_range(0..n.transitions.len());
                n.transitions[i].probability =
                    if r.random_bool(0.5) { -r.random_range(0.001..1.0) } else { 1.0 + r.random_range(0.001..1.0) };
                return "probability range";
            }
            3 => {
                if let Some(n) = pick(r, tree, 2) {
                    let k = n.transitions.len() as f64;
                    for t in &mut n.transitions {
                        t.probability = r.random_range((1.0 / k + 0.05)..=1.0);
                    }
                    return "sibling sum";
                }
            }
            4 => {
                let n = pick(r, tree, 0).unwrap();
                if n.is_goal {
                    n.is_goal = false;
                }
                let mut chain = StateNode::leaf("deep", 0.5, false);
                for i in 0..MAX_LAYERS {
                    chain = StateNode::leaf(format!("deep{i}"), 0.5, false).with("lift", 1.0, chain);
                }
                n.transitions.iter_mut().for_each(|t| t.probability *= 0.5);
                if n.transitions.is_empty() {
                    n.transitions.push(chain.transitions.remove(0));
                } else {
                    n.transitions.push(Transition { action: "lift".into(), probability: 0.5, next_state: chain });
                }
                return "depth";
            }
            _ => {
                let n = pick(r, tree, 1).unwrap();
                let i = r.random_range(0..n.transitions.len());
                n.transitions[i].action = ["teleport", "", "Lift", "grasp "][r.random_range(0..4)].into();
                return "vocabulary";
            }
        }
    }
}

// ------------------------------------------------------------- estimator

fn random_stochastic(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| r.random_range(0.02..1.0));
    for i in 0..rows {
        let total: f64 = m.row(i).iter().sum();
        m.row_mut(i).iter_mut().for_each(|v| *v /= total);
    }
    m
}

pub fn random_params(r: &mut impl Rng, n: usize, m: usize, a: usize) -> DbnParams {
    let transitions = (0..a).map(|_| random_stochastic(r, n, n)).collect();
    DbnParams::new(transitions, random_stochastic(r, n, m)).expect("rows are normalized")
}

pub fn random_belief(r: &mut impl Rng, n: usize) -> BeliefState {
    let v: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let total: f64 = v.iter().sum();
    BeliefState(v.into_iter().map(|x| x / total).collect())
}

/// Posterior over the final hidden state and the marginal likelihood of the
/// observations, by summing over all `N^(T+1)` hidden paths.
pub fn enumerate_posterior(prior: &[f64], steps: &[(usize, usize)], p: &DbnParams) -> (Vec<f64>, f64) {
    let n = prior.len();
    let t = steps.len();
    let mut post = vec![0.0; n];
    let total_paths = n.pow(t as u32 + 1);
    for code in 0..total_paths {
        let mut c = code;
        let mut path = Vec::with_capacity(t + 1);
        for _ in 0..=t {
            path.push(c % n);
            c /= n;
        }
        let mut w = prior[path[0]];
        for (k, &(a, o)) in steps.iter().enumerate() {
            w *= p.transitions[a][(path[k], path[k + 1])] * p.emission[(path[k + 1], o)];
        }
        post[path[t]] += w;
    }
    let z: f64 = post.iter().sum();
    (post.into_iter().map(|x| x / z).collect(), z)
}

pub fn sample_episodes(r: &mut impl Rng, truth: &DbnParams, count: usize, len: usize) -> Vec<Episode> {
    let n = truth.n_states();
    let draw = |r: &mut ChaCha8Rng, row: &[f64]| {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        row.len() - 1
    };
    let mut local = rng(r.random());
    (0..count)
        .map(|_| {
            let mut x = local.random_range(0..n);
            (0..len)
                .map(|_| {
                    let a = local.random_range(0..truth.n_actions());
                    x = draw(&mut local, truth.transitions[a].row(x));
                    let o = draw(&mut local, truth.emission.row(x));
                    (a, o)
                })
                .collect()
        })
        .collect()
}

/// Largest deviation between the step-by-step filter and path enumeration
/// over one random instance with N ≤ 4, T ≤ 5, including the accumulated
/// log-likelihood.
pub fn filter_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, m, a, t) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=3), r.random_range(1..=5));
    let params = random_params(&mut r, n, m, a);
    let prior = random_belief(&mut r, n);
    let steps: Vec<(usize, usize)> = (0..t).map(|_| (r.random_range(0..a), r.random_range(0..m))).collect();
    let mut b = prior.clone();
    let mut ll = 0.0;
    let mut worst: f64 = 0.0;
    for k in 1..=t {
        let (act, obs) = steps[k - 1];
        let step = forward_filter(&b, act, obs, &params).unwrap();
        assert!(!step.zero_likelihood);
        ll += step.log_likelihood;
        b = step.belief;
        let (want, z) = enumerate_posterior(&prior.0, &steps[..k], &params);
        for (x, y) in b.0.iter().zip(&want) {
            worst = worst.max((x - y).abs());
        }
        worst = worst.max((ll - z.ln()).abs());
    }
    worst
}

// -------------------------------------------------------------- reactive

/// `kp ⊙ e + kd ⊙ (e − e_prev) + σ · damping(s, window)` scaled by `ζ`,
/// where damping pushes each component toward the window mean by the
/// window's population standard deviation.
pub fn correction_oracle(
    zeta: f64,
    sigma: f64,
    kp: &[f64],
    kd: &[f64],
    e: &[f64],
    prev_e: &[f64],
    s: &[f64],
    window: &[Vec<f64>],
) -> Vec<f64> {
    let d = e.len();
    let n = window.len() as f64;
    (0..d)
        .map(|k| {
            let pd = kp[k] * e[k] + kd[k] * (e[k] - prev_e[k]);
            let damp = if window.len() < 2 {
                0.0
            } else {
                let mean = window.iter().map(|w| w[k]).sum::<f64>() / n;
                let var = window.iter().map(|w| (w[k] - mean) * (w[k] - mean)).sum::<f64>() / n;
                let dev = s[k] - mean;
                if dev > 0.0 {
                    -var.sqrt()
                } else if dev < 0.0 {
                    var.sqrt()
                } else {
                    0.0
                }
            };
            zeta * (pd + sigma * damp)
        })
        .collect()
}

/// Replays a fixed sequence of raw policy outputs.
pub struct Replay(pub VecDeque<Vec<f64>>);

impl Policy for Replay {
    fn act(&mut self, _: &[f64], _: &str, _: &[f64]) -> Vec<f64> {
        self.0.pop_front().expect("one output per step")
    }
}

pub struct Case {
    pub zeta: f64,
    pub sigma: f64,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub window: usize,
    pub raw: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
}

pub fn random_case(seed: u64, steps: usize) -> Case {
    let mut r = rng(seed);
    let d = r.random_range(1..6);
    let mut vec = |lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| r.random_range(lo..hi)).collect() };
    let kp = vec(0.0, 2.0);
    let kd = vec(0.0, 1.0);
    let raw = (0..steps).map(|_| vec(-1.5, 1.5)).collect();
    let states = (0..steps).map(|_| vec(-3.0, 3.0)).collect();
    let errors = (0..steps).map(|_| vec(-2.0, 2.0)).collect();
    Case {
        zeta: r.random_range(0.0..2.0),
        sigma: r.random_range(0.0..2.0),
        kp,
        kd,
        window: r.random_range(1..20),
        raw,
        states,
        errors,
    }
}

/// Checks the zeta-path identity against the oracle at every step and
/// returns the largest deviation.
pub fn identity_error(case: &Case) -> f64 {
    let gains = |z: f64| ReactiveGains::new(z, case.sigma, case.kp.clone(), case.kd.clone()).unwrap();
    let mut with = ReactiveController::new(gains(case.zeta)).with_u_max(f64::INFINITY).with_window(case.window);
    let mut without = ReactiveController::new(gains(0.0)).with_u_max(f64::INFINITY).with_window(case.window);
    let mut p1 = Replay(case.raw.iter().cloned().collect());
    let mut p0 = Replay(case.raw.iter().cloned().collect());
    let d = case.kp.len();
    let mut prev_e = vec![0.0; d];
    let mut window: VecDeque<Vec<f64>> = VecDeque::new();
    let mut worst: f64 = 0.0;
    for (s, e) in case.states.iter().zip(&case.errors) {
        let u1 = with.rvla_step(&mut p1, s, "act", &[], e).unwrap().u;
        let u0 = without.rvla_step(&mut p0, s, "act", &[], e).unwrap().u;
        if window.len() == case.window {
            window.pop_front();
        }
        window.push_back(s.clone());
        let w: Vec<Vec<f64>> = window.iter().cloned().collect();
        let want = correction_oracle(case.zeta, case.sigma, &case.kp, &case.kd, e, &prev_e, s, &w);
        for k in 0..d {
            worst = worst.max(((u1[k] - u0[k]) - want[k]).abs());
        }
        prev_e = e.clone();
    }
    worst
}
