//! Shared episodic memory with exponential decay, plus the pipeline's
//! action-history window and semantic concept store.

use std::collections::{BTreeMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bus::{Bus, BusError, DeliveryReceipt};
use crate::clock::Tick;
use crate::linalg::{self, check_dim, DimensionMismatch, Matrix};
use crate::protocol::{AgentId, Document, Importance, PayloadKind};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("decay rate must lie in [0, 1], got {0}")]
    InvalidDecay(f64),
    #[error("no semantic entry for key {0:?}")]
    KeyAbsent(String),
    #[error("vectors stored in memory must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub vector: Vec<f64>,
    pub alpha: f64,
    pub updated_at: Tick,
}

impl MemoryState {
    pub fn new(vector: Vec<f64>, alpha: f64) -> Result<Self, MemoryError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(MemoryError::InvalidDecay(alpha));
        }
        if !linalg::all_finite(&vector) {
            return Err(MemoryError::NonFinite);
        }
        Ok(Self { vector, alpha, updated_at: Tick::ZERO })
    }

    pub fn zeros(dim: usize, alpha: f64) -> Result<Self, MemoryError> {
        Self::new(vec![0.0; dim], alpha)
    }

    pub fn to_document(&self) -> Document {
        Document::object([("memory", Document::floats(&self.vector)), ("tick", Document::from(self.updated_at.0))])
    }
}

/// The consolidation term added to the decayed memory each update.
pub trait Consolidate {
    fn consolidate(&self, s: &[f64], z: &[f64], m: &[f64]) -> Result<Vec<f64>, DimensionMismatch>;
}

/// `g ≡ 0`: pure decay.
#[derive(Debug, Clone, Copy)]
pub struct NoConsolidation;

impl Consolidate for NoConsolidation {
    fn consolidate(&self, _: &[f64], _: &[f64], m: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
        Ok(vec![0.0; m.len()])
    }
}

/// `g = tanh(W · [s; z; m] + b)` with weights drawn once from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhAffine {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    dims: (usize, usize, usize),
}

impl TanhAffine {
    pub fn seeded(d_m: usize, d_s: usize, d_z: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = d_s + d_z + d_m;
        let scale = 1.0 / (n.max(1) as f64).sqrt();
        let weights = Matrix::from_fn(d_m, n, |_, _| rng.random_range(-1.0..1.0) * scale);
        let bias = (0..d_m).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self { weights, bias, dims: (d_s, d_z, d_m) }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, d_s: usize, d_z: usize) -> Result<Self, DimensionMismatch> {
        let d_m = weights.rows();
        check_dim("consolidation bias", d_m, bias.len())?;
        check_dim("consolidation input width", d_s + d_z + d_m, weights.cols())?;
        Ok(Self { weights, bias, dims: (d_s, d_z, d_m) })
    }
}

impl Consolidate for TanhAffine {
    fn consolidate(&self, s: &[f64], z: &[f64], m: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
        let (d_s, d_z, d_m) = self.dims;
        check_dim("consolidation state input", d_s, s.len())?;
        check_dim("consolidation feature input", d_z, z.len())?;
        check_dim("consolidation memory input", d_m, m.len())?;
        let input: Vec<f64> = s.iter().chain(z).chain(m).copied().collect();
        let mut out = self.weights.mul_vec(&input)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o = (*o + b).tanh();
        }
        Ok(out)
    }
}

/// One memory step: `m_t = (1 − α)·m_{t−1} + g(s, z, m_{t−1})`.
///
/// With `literal_sign` the decay term is `−α·m_{t−1}` instead.
pub fn hm_update(
    prev: &MemoryState,
    s: &[f64],
    z: &[f64],
    g: &impl Consolidate,
    literal_sign: bool,
    now: Tick,
) -> Result<MemoryState, MemoryError> {
    let gv = g.consolidate(s, z, &prev.vector)?;
    check_dim("consolidation output", prev.vector.len(), gv.len())?;
    let keep = if literal_sign { -prev.alpha } else { 1.0 - prev.alpha };
    let vector = prev.vector.iter().zip(&gv).map(|(m, g)| keep * m + g).collect();
    Ok(MemoryState { vector, alpha: prev.alpha, updated_at: now })
}

/// The memory owner: updates at the memory rate and broadcasts snapshots.
#[derive(Debug, Clone)]
pub struct EpisodicMemory {
    pub id: AgentId,
    state: MemoryState,
    map: TanhAffine,
    literal_sign: bool,
    persist: Option<PathBuf>,
}

impl EpisodicMemory {
    pub fn new(id: AgentId, initial: MemoryState, map: TanhAffine) -> Self {
        Self { id, state: initial, map, literal_sign: false, persist: None }
    }

    /// Use the sign-flipped decay term for fidelity experiments.
    pub fn literal_sign(mut self, on: bool) -> Self {
        self.literal_sign = on;
        self
    }

    /// Append every update to `path` as `{"memory":[…],"tick":n}` lines.
    pub fn persist_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.persist = Some(path.into());
        self
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    pub fn update(&mut self, s: &[f64], z: &[f64], now: Tick) -> Result<&MemoryState, MemoryError> {
        self.state = hm_update(&self.state, s, z, &self.map, self.literal_sign, now)?;
        if let Some(path) = &self.persist {
            let line = self.state.to_document().canonical_bytes().map_err(|_| MemoryError::NonFinite)?;
            // Persistence is best-effort; the in-memory state is authoritative.
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                let _ = f.write_all(&line).and_then(|_| f.write_all(b"\n"));
            }
        }
        Ok(&self.state)
    }

    /// Publish the current snapshot to every subscriber of the MEDIUM channel.
    pub fn broadcast(&self, bus: &Bus) -> Result<DeliveryReceipt, BusError> {
        hm_broadcast(&self.state, &self.id, bus)
    }
}

pub fn hm_broadcast(state: &MemoryState, sender: &AgentId, bus: &Bus) -> Result<DeliveryReceipt, BusError> {
    bus.send(sender, Importance::Medium, PayloadKind::HtnMemory, state.to_document())
}

/// Read a broadcast snapshot back out of an `HtnMemory` body.
pub fn snapshot_from_body(body: &Document) -> Option<(Vec<f64>, Tick)> {
    let values = body.get("memory")?.as_array()?.iter().map(Document::as_f64).collect::<Option<Vec<f64>>>()?;
    Some((values, Tick(body.get("tick")?.as_u64()?)))
}

/// The last `capacity` actions, newest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionHistory {
    capacity: usize,
    items: VecDeque<String>,
}

pub const DEFAULT_HISTORY: usize = 32;

impl Default for ActionHistory {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY)
    }
}

impl ActionHistory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, action: impl Into<String>) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_back();
        }
        self.items.push_front(action.into());
    }

    pub fn window(&self) -> Vec<String> {
        self.items.iter().cloned().collect()
    }

    pub fn latest(&self) -> Option<&str> {
        self.items.front().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn to_document(&self) -> Document {
        Document::object([("actions", Document::strings(&self.window()))])
    }
}

/// Functional push, returning the updated history.
pub fn push_action(mut history: ActionHistory, action: impl Into<String>) -> ActionHistory {
    history.push(action);
    history
}

/// Concept vectors keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticMemory {
    entries: BTreeMap<String, Vec<f64>>,
}

impl SemanticMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<(), MemoryError> {
        if !linalg::all_finite(&vector) {
            return Err(MemoryError::NonFinite);
        }
        self.entries.insert(key.into(), vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[f64], MemoryError> {
        self.entries.get(key).map(Vec::as_slice).ok_or_else(|| MemoryError::KeyAbsent(key.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Highest cosine similarity to `query`; ties go to the smaller key.
    pub fn nearest(&self, query: &[f64]) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (k, v) in &self.entries {
            let score = linalg::cosine(query, v);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        best
    }
}
