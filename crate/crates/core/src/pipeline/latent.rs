//! Latent relay update and state review.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bus::{Bus, BusError, DeliveryReceipt};
use crate::clock::Tick;
use crate::linalg::{self, check_dim, DimensionMismatch, Matrix};
use crate::protocol::{AgentId, Document, Importance, PayloadKind};

/// Default drift threshold for unit-normalized embeddings.
pub const REVIEW_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub vector: Vec<f64>,
    pub tick: Tick,
}

impl LatentState {
    pub fn new(vector: Vec<f64>, tick: Tick) -> Self {
        Self { vector, tick }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { vector: vec![0.0; dim], tick: Tick::ZERO }
    }
}

/// Bounded relay `f(l, a, m, τ) = tanh(W · [l; a; m; τ] + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Relay {
    weights: Matrix,
    bias: Vec<f64>,
    dims: [usize; 4],
}

impl Relay {
    /// Random weights in `±1/sqrt(fan_in)`, reproducible from `seed`.
    pub fn seeded(d_l: usize, d_a: usize, d_m: usize, d_f: usize, seed: u64) -> Self {
        let fan_in = d_l + d_a + d_m + d_f;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Matrix::from_fn(d_l, fan_in, |_, _| rng.random_range(-bound..=bound));
        let bias = (0..d_l).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { weights, bias, dims: [d_l, d_a, d_m, d_f] }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, d_a: usize, d_m: usize, d_f: usize) -> Result<Self, DimensionMismatch> {
        let d_l = weights.rows();
        check_dim("relay bias", d_l, bias.len())?;
        check_dim("relay input width", d_l + d_a + d_m + d_f, weights.cols())?;
        Ok(Self { weights, bias, dims: [d_l, d_a, d_m, d_f] })
    }

    pub fn latent_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn relay(&self, l: &[f64], a: &[f64], m: &[f64], frontier: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
        let [d_l, d_a, d_m, d_f] = self.dims;
        check_dim("latent", d_l, l.len())?;
        check_dim("action embedding", d_a, a.len())?;
        check_dim("task memory", d_m, m.len())?;
        check_dim("frontier embedding", d_f, frontier.len())?;
        let input: Vec<f64> = [l, a, m, frontier].concat();
        let mut out = self.weights.mul_vec(&input)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o = (*o + b).tanh();
        }
        Ok(out)
    }
}

/// `l_{t+1} = f(l_t, a_t, m_task, frontier) + λ · dbn_term`.
pub fn pipeline_update(
    relay: &Relay,
    latent: &LatentState,
    action: &[f64],
    task_memory: &[f64],
    frontier: &[f64],
    dbn_term: &[f64],
    lambda: f64,
) -> Result<LatentState, DimensionMismatch> {
    check_dim("dbn term", relay.latent_dim(), dbn_term.len())?;
    let mut next = relay.relay(&latent.vector, action, task_memory, frontier)?;
    linalg::axpy(&mut next, lambda, dbn_term);
    Ok(LatentState { vector: next, tick: Tick(latent.tick.0 + 1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReviewDecision {
    Keep,
    Replan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReviewVerdict {
    pub drift: f64,
    pub decision: ReviewDecision,
}

/// Euclidean drift between the expected and observed embeddings.
pub fn state_review(expected: &[f64], observed: &[f64], threshold: f64) -> Result<ReviewVerdict, DimensionMismatch> {
    check_dim("state review", expected.len(), observed.len())?;
    let drift = linalg::norm2(&linalg::sub(expected, observed));
    let decision = if drift > threshold { ReviewDecision::Replan } else { ReviewDecision::Keep };
    Ok(ReviewVerdict { drift, decision })
}

/// Run a review and, on `Replan`, publish a HIGH command asking the planner
/// to rework `goal`.
pub fn review_and_notify(
    bus: &Bus,
    sender: &AgentId,
    goal: &str,
    expected: &[f64],
    observed: &[f64],
    threshold: f64,
) -> Result<(ReviewVerdict, Option<DeliveryReceipt>), ReviewError> {
    let verdict = state_review(expected, observed, threshold)?;
    if verdict.decision == ReviewDecision::Keep {
        return Ok((verdict, None));
    }
    let body = Document::object([
        ("goal", Document::from(goal)),
        ("reason", Document::from(format!("state drift {:.4} exceeds {threshold}", verdict.drift))),
    ]);
    let receipt = bus.send(sender, Importance::High, PayloadKind::HighLevelCommand, body)?;
    Ok((verdict, Some(receipt)))
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lambda_ignores_dbn_term() {
        let r = Relay::seeded(3, 2, 2, 2, 7);
        let l = LatentState::zeros(3);
        let a = pipeline_update(&r, &l, &[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0], &[9.0, 9.0, 9.0], 0.0).unwrap();
        let b = pipeline_update(&r, &l, &[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0], &[-4.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dbn_term_is_additive() {
        let r = Relay::seeded(2, 1, 1, 1, 1);
        let l = LatentState::zeros(2);
        let a = pipeline_update(&r, &l, &[1.0], &[0.0], &[1.0], &[0.1, 0.2], 0.5).unwrap();
        let b = pipeline_update(&r, &l, &[1.0], &[0.0], &[1.0], &[0.2, 0.4], 0.5).unwrap();
        assert!((b.vector[0] - a.vector[0] - 0.05).abs() < 1e-15);
        assert!((b.vector[1] - a.vector[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn review_threshold() {
        let v = state_review(&[1.0, 0.0], &[1.0, 0.0], REVIEW_THRESHOLD).unwrap();
        assert_eq!((v.drift, v.decision), (0.0, ReviewDecision::Keep));
        let v = state_review(&[1.0, 0.0], &[0.0, 1.0], REVIEW_THRESHOLD).unwrap();
        assert_eq!(v.decision, ReviewDecision::Replan);
        assert!(state_review(&[1.0], &[1.0, 2.0], 0.3).is_err());
    }
}
