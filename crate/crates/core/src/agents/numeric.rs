//! Numeric couplings between agents: output combination over a
//! connectivity matrix, multimodal fusion, attention-style semantic blending
//! and plan/semantics inspection.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::clock::Tick;
use crate::embed::FeatureHasher;
use crate::linalg::{self, check_dim, DimensionMismatch, Matrix};
use crate::protocol::{AgentId, Document};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub agent_id: AgentId,
    pub vector: Vec<f64>,
    pub produced_at: Tick,
}

impl AgentOutput {
    pub fn new(agent_id: AgentId, vector: Vec<f64>, produced_at: Tick) -> Self {
        Self { agent_id, vector, produced_at }
    }
}

/// Inputs every agent sees when it computes its next output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentContext {
    pub external_input: Vec<f64>,
    pub internal_state: Vec<f64>,
    pub shared_memory: Vec<f64>,
    pub prior_semantic: Vec<f64>,
}

/// Directed coupling blocks `F[i][j]`, mapping agent j's output space into
/// agent i's. Self-blocks are not representable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConnectivityMatrix {
    blocks: BTreeMap<(AgentId, AgentId), Matrix>,
}

impl ConnectivityMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare the edge j → i. Returns `false` (and stores nothing) for i == j.
    pub fn connect(&mut self, to: AgentId, from: AgentId, block: Matrix) -> bool {
        if to == from {
            return false;
        }
        self.blocks.insert((to, from), block);
        true
    }

    pub fn block(&self, to: &AgentId, from: &AgentId) -> Option<&Matrix> {
        self.blocks.get(&(to.clone(), from.clone()))
    }

    /// Incoming edges of `to`, ordered by source id.
    pub fn incoming<'a>(&'a self, to: &'a AgentId) -> impl Iterator<Item = (&'a AgentId, &'a Matrix)> + 'a {
        self.blocks.iter().filter(move |((t, _), _)| t == to).map(|((_, f), m)| (f, m))
    }
}

/// `own + Σ_j F[i][j] · neighbors[j]`, where `neighbors` holds the previous
/// step's outputs. Neighbors without an output yet contribute nothing.
pub fn combine_outputs(
    own: &AgentOutput,
    neighbors: &BTreeMap<AgentId, AgentOutput>,
    f: &ConnectivityMatrix,
) -> Result<AgentOutput, DimensionMismatch> {
    let mut out = own.vector.clone();
    for (from, block) in f.incoming(&own.agent_id) {
        check_dim("connectivity block rows", out.len(), block.rows())?;
        if let Some(prev) = neighbors.get(from) {
            let contribution = block.mul_vec(&prev.vector)?;
            linalg::axpy(&mut out, 1.0, &contribution);
        }
    }
    Ok(AgentOutput { agent_id: own.agent_id.clone(), vector: out, produced_at: own.produced_at })
}

/// Embeds a structured observation by hashing its flattened `path=value`
/// features. Numbers contribute their value as the feature weight; numeric
/// arrays at the top level are taken as dense vectors.
#[derive(Debug, Clone, Copy)]
pub struct DocumentEmbedder {
    hasher: FeatureHasher,
}

impl DocumentEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { hasher: FeatureHasher::new(dim) }
    }

    pub fn dim(&self) -> usize {
        self.hasher.dim()
    }

    pub fn embed(&self, doc: &Document) -> Vec<f64> {
        if let Some(items) = doc.as_array() {
            if !items.is_empty() && items.iter().all(|d| d.as_f64().is_some()) {
                let dense: Vec<f64> = items.iter().filter_map(Document::as_f64).collect();
                return linalg::project(&dense, self.dim());
            }
        }
        let mut acc = vec![0.0; self.dim()];
        self.walk(&mut acc, "", doc);
        linalg::normalize(&acc)
    }

    fn walk(&self, acc: &mut [f64], path: &str, doc: &Document) {
        match doc {
            Document::Null => self.hasher.accumulate(acc, &format!("{path}=null"), 1.0),
            Document::Bool(b) => self.hasher.accumulate(acc, &format!("{path}={b}"), 1.0),
            Document::Int(i) => self.hasher.accumulate(acc, path, *i as f64),
            Document::Float(v) => self.hasher.accumulate(acc, path, *v),
            Document::Str(s) => {
                self.hasher.accumulate(acc, &format!("{path}={s}"), 1.0);
                for word in s.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
                    self.hasher.accumulate(acc, &word.to_lowercase(), 0.5);
                }
            }
            // Array positions are ignored so that set-like lists embed
            // independently of their order.
            Document::Array(items) => items.iter().for_each(|d| self.walk(acc, &format!("{path}[]"), d)),
            Document::Object(map) => map.iter().for_each(|(k, v)| self.walk(acc, &format!("{path}.{k}"), v)),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("no embedder registered for modality {0:?}")]
    UnknownModality(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

/// Post-fusion transform applied to the weighted modality sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backbone {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone)]
struct Modality {
    embedder: DocumentEmbedder,
    weight: Matrix,
}

/// Perception fusion: `z = backbone(Σ_m W_m · Emb_m(o_m))`.
#[derive(Debug, Clone)]
pub struct PerceptionFusion {
    out_dim: usize,
    modalities: BTreeMap<String, Modality>,
    backbone: Backbone,
}

impl PerceptionFusion {
    pub fn new(out_dim: usize) -> Self {
        Self { out_dim, modalities: BTreeMap::new(), backbone: Backbone::Identity }
    }

    pub fn with_backbone(mut self, backbone: Backbone) -> Self {
        self.backbone = backbone;
        self
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Register a modality with embedding width `weight.cols()`.
    pub fn register(&mut self, name: &str, weight: Matrix) -> Result<(), DimensionMismatch> {
        check_dim("modality weight rows", self.out_dim, weight.rows())?;
        let embedder = DocumentEmbedder::new(weight.cols());
        self.modalities.insert(name.to_owned(), Modality { embedder, weight });
        Ok(())
    }

    pub fn embed(&self, name: &str, doc: &Document) -> Result<Vec<f64>, FusionError> {
        let m = self.modalities.get(name).ok_or_else(|| FusionError::UnknownModality(name.to_owned()))?;
        Ok(m.embedder.embed(doc))
    }

    pub fn fuse(&self, observations: &BTreeMap<String, Document>) -> Result<Vec<f64>, FusionError> {
        let mut z = vec![0.0; self.out_dim];
        for (name, doc) in observations {
            let m = self.modalities.get(name).ok_or_else(|| FusionError::UnknownModality(name.clone()))?;
            let e = m.embedder.embed(doc);
            linalg::axpy(&mut z, 1.0, &m.weight.mul_vec(&e)?);
        }
        if self.backbone == Backbone::Tanh {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(z)
    }
}

/// Convenience wrapper matching the fusion signature used by the pipeline.
pub fn pa_fuse(fusion: &PerceptionFusion, observations: &BTreeMap<String, Document>) -> Result<Vec<f64>, FusionError> {
    fusion.fuse(observations)
}

/// Default sharpness of the semantic attention softmax.
pub const ATTENTION_SHARPNESS: f64 = 10.0;

/// Softmax weights over the candidates, scored by the cosine between the
/// query `z` and each candidate. Zero vectors score 0.
pub fn attention_weights(z: &[f64], candidates: &[&[f64]], sharpness: f64) -> Vec<f64> {
    let scores: Vec<f64> = candidates.iter().map(|c| sharpness * linalg::cosine(z, c)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Semantic state as a convex blend of the fused features, shared memory
/// and the previous semantic state, weighted by attention to `z`.
pub fn sa_interpret(z: &[f64], m: &[f64], h_prev: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
    sa_interpret_with(z, m, h_prev, ATTENTION_SHARPNESS)
}

pub fn sa_interpret_with(z: &[f64], m: &[f64], h_prev: &[f64], sharpness: f64) -> Result<Vec<f64>, DimensionMismatch> {
    check_dim("memory vs features", z.len(), m.len())?;
    check_dim("previous semantic state vs features", z.len(), h_prev.len())?;
    let candidates = [z, m, h_prev];
    let w = attention_weights(z, &candidates, sharpness);
    let mut h = vec![0.0; z.len()];
    for (wi, c) in w.iter().zip(candidates) {
        linalg::axpy(&mut h, *wi, c);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Replan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inspection {
    /// `p − h`, fed back to the planner.
    pub monitor: Vec<f64>,
    pub magnitude: f64,
    pub verdict: Verdict,
}

/// Default replan threshold on the max-norm of the plan/semantics gap.
pub const INSPECT_THRESHOLD: f64 = 0.5;

pub fn ia_inspect(p: &[f64], h: &[f64], threshold: f64) -> Result<Inspection, DimensionMismatch> {
    check_dim("plan vs semantic state", p.len(), h.len())?;
    let monitor = linalg::sub(p, h);
    let magnitude = linalg::norm_inf(&monitor);
    let verdict = if magnitude > threshold { Verdict::Replan } else { Verdict::Continue };
    Ok(Inspection { monitor, magnitude, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AgentId {
        AgentId::from(s)
    }

    #[test]
    fn zero_connectivity_passes_own_output_through() {
        let own = AgentOutput::new(id("a"), vec![1.0, 2.0], Tick(1));
        let mut f = ConnectivityMatrix::new();
        f.connect(id("a"), id("b"), Matrix::zeros(2, 3));
        let n = BTreeMap::from([(id("b"), AgentOutput::new(id("b"), vec![5.0, 6.0, 7.0], Tick(0)))]);
        assert_eq!(combine_outputs(&own, &n, &f).unwrap().vector, vec![1.0, 2.0]);
        assert!(!f.connect(id("a"), id("a"), Matrix::identity(2)));
    }

    #[test]
    fn identity_block_copies_neighbor() {
        let own = AgentOutput::new(id("a"), vec![0.0; 3], Tick(1));
        let mut f = ConnectivityMatrix::new();
        f.connect(id("a"), id("b"), Matrix::identity(3));
        let n = BTreeMap::from([(id("b"), AgentOutput::new(id("b"), vec![0.1, -0.2, 0.3], Tick(0)))]);
        assert_eq!(combine_outputs(&own, &n, &f).unwrap().vector, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn block_shape_is_checked() {
        let own = AgentOutput::new(id("a"), vec![0.0; 2], Tick(1));
        let mut f = ConnectivityMatrix::new();
        f.connect(id("a"), id("b"), Matrix::identity(3));
        let n = BTreeMap::from([(id("b"), AgentOutput::new(id("b"), vec![0.0; 3], Tick(0)))]);
        assert!(combine_outputs(&own, &n, &f).is_err());
    }

    #[test]
    fn single_modality_identity_fusion() {
        let mut pa = PerceptionFusion::new(8);
        pa.register("vision", Matrix::identity(8)).unwrap();
        let doc = Document::object([("color", Document::from("red"))]);
        let z = pa.fuse(&BTreeMap::from([("vision".to_owned(), doc.clone())])).unwrap();
        assert_eq!(z, pa.embed("vision", &doc).unwrap());
        let err = pa.fuse(&BTreeMap::from([("sonar".to_owned(), doc)])).unwrap_err();
        assert_eq!(err, FusionError::UnknownModality("sonar".into()));
    }

    #[test]
    fn semantic_blend_fixed_point_and_zero() {
        let v = vec![0.3, -0.4, 0.5];
        assert_eq!(sa_interpret(&v, &v, &v).unwrap(), v);
        assert_eq!(sa_interpret(&[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let w = attention_weights(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]], ATTENTION_SHARPNESS);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[1] && w[1] > w[2]);
    }

    #[test]
    fn inspection_threshold() {
        let p = vec![0.2, 0.1];
        assert_eq!(ia_inspect(&p, &p, INSPECT_THRESHOLD).unwrap().verdict, Verdict::Continue);
        let r = ia_inspect(&[0.9, 0.0], &[0.1, 0.0], INSPECT_THRESHOLD).unwrap();
        assert_eq!(r.verdict, Verdict::Replan);
        assert!((r.magnitude - 0.8).abs() < 1e-12);
    }
}
