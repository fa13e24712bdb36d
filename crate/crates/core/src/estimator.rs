//! Discrete dynamic Bayesian filter over hidden task phases: forward
//! filtering, posterior-mean prediction and Baum-Welch re-estimation with
//! action-dependent transitions.

use std::fmt::Write as _;

use thiserror::Error;

use crate::linalg::{self, DimensionMismatch, Matrix};

pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("action {0} out of range")]
    UnknownAction(usize),
    #[error("observation {0} out of range")]
    UnknownObservation(usize),
    #[error("episode {episode} has zero likelihood under the model")]
    ZeroLikelihood { episode: usize },
    #[error("re-estimation needs at least one non-empty episode and one iteration")]
    EmptyInput,
    #[error("params text: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState(pub Vec<f64>);

impl BeliefState {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn delta(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|&p| p >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnParams {
    /// One N×N row-stochastic matrix per action.
    pub transitions: Vec<Matrix>,
    /// N×M row-stochastic emission matrix.
    pub emission: Matrix,
}

fn check_stochastic(name: &str, m: &Matrix) -> Result<(), EstimatorError> {
    for i in 0..m.rows() {
        let row = m.row(i);
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(EstimatorError::InvalidParams(format!("{name} row {i} has a negative or non-finite entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE * row.len().max(1) as f64 {
            return Err(EstimatorError::InvalidParams(format!("{name} row {i} sums to {sum}")));
        }
    }
    Ok(())
}

impl DbnParams {
    pub fn new(transitions: Vec<Matrix>, emission: Matrix) -> Result<Self, EstimatorError> {
        let n = emission.rows();
        if n == 0 || emission.cols() == 0 || transitions.is_empty() {
            return Err(EstimatorError::InvalidParams("need at least one state, observation and action".into()));
        }
        for (a, t) in transitions.iter().enumerate() {
            if t.rows() != n || t.cols() != n {
                return Err(EstimatorError::InvalidParams(format!(
                    "transition {a} is {}x{}, expected {n}x{n}",
                    t.rows(),
                    t.cols()
                )));
            }
            check_stochastic(&format!("transition {a}"), t)?;
        }
        check_stochastic("emission", &emission)?;
        Ok(Self { transitions, emission })
    }

    pub fn uniform(n_states: usize, n_obs: usize, n_actions: usize) -> Self {
        let t = Matrix::from_fn(n_states, n_states, |_, _| 1.0 / n_states as f64);
        Self { transitions: vec![t; n_actions], emission: Matrix::from_fn(n_states, n_obs, |_, _| 1.0 / n_obs as f64) }
    }

    pub fn n_states(&self) -> usize {
        self.emission.rows()
    }

    pub fn n_observations(&self) -> usize {
        self.emission.cols()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    /// Plain-text snapshot: a size line, then each matrix row by row.
    pub fn to_text(&self) -> String {
        let mut out = format!("dbn {} {} {}\n", self.n_states(), self.n_observations(), self.n_actions());
        let mut write = |title: &str, m: &Matrix| {
            out.push_str(title);
            out.push('\n');
            for r in m.to_rows() {
                let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", cells.join(" "));
            }
        };
        for (a, t) in self.transitions.iter().enumerate() {
            write(&format!("transition {a}"), t);
        }
        write("emission", &self.emission);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EstimatorError> {
        let fmt = |m: &str| EstimatorError::Format(m.to_owned());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("dbn "))
            .ok_or_else(|| fmt("missing header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| fmt("bad header")))
            .collect::<Result<_, _>>()?;
        let [n, m, a] = head[..] else { return Err(fmt("header needs three sizes")) };
        let mut read = |rows: usize, cols: usize| -> Result<Matrix, EstimatorError> {
            lines.next().ok_or_else(|| fmt("missing matrix title"))?;
            let mut data = Vec::with_capacity(rows);
            for _ in 0..rows {
                let row: Vec<f64> = lines
                    .next()
                    .ok_or_else(|| fmt("missing row"))?
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| fmt("bad number")))
                    .collect::<Result<_, _>>()?;
                if row.len() != cols {
                    return Err(fmt("row width"));
                }
                data.push(row);
            }
            Ok(Matrix::from_rows(data)?)
        };
        let transitions = (0..a).map(|_| read(n, n)).collect::<Result<Vec<_>, _>>()?;
        let emission = read(n, m)?;
        Self::new(transitions, emission)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub belief: BeliefState,
    /// Set when the observation had zero probability; the belief was reset
    /// to uniform.
    pub zero_likelihood: bool,
    /// Log of the normalizer, i.e. log p(o_t | history).
    pub log_likelihood: f64,
}

/// One forward step: `b' ∝ emission[:, obs] ⊙ (T_actionᵀ · b)`.
pub fn forward_filter(
    belief: &BeliefState,
    action: usize,
    observation: usize,
    params: &DbnParams,
) -> Result<FilterStep, EstimatorError> {
    forward_filter_weighted(belief, action, observation, params, None)
}

/// Forward step with an optional per-state log-weight folded into the
/// likelihood (zero weights leave the plain filter unchanged).
pub fn forward_filter_weighted(
    belief: &BeliefState,
    action: usize,
    observation: usize,
    params: &DbnParams,
    log_weight: Option<&[f64]>,
) -> Result<FilterStep, EstimatorError> {
    let n = params.n_states();
    linalg::check_dim("belief", n, belief.len())?;
    let t = params.transitions.get(action).ok_or(EstimatorError::UnknownAction(action))?;
    if observation >= params.n_observations() {
        return Err(EstimatorError::UnknownObservation(observation));
    }
    if let Some(w) = log_weight {
        linalg::check_dim("log weight", n, w.len())?;
    }
    let predicted = t.mul_vec_transposed(&belief.0)?;
    let mut next: Vec<f64> = (0..n)
        .map(|j| {
            let w = log_weight.map_or(1.0, |w| w[j].exp());
            params.emission[(j, observation)] * predicted[j] * w
        })
        .collect();
    let total: f64 = next.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Ok(FilterStep { belief: BeliefState::uniform(n), zero_likelihood: true, log_likelihood: f64::NEG_INFINITY });
    }
    next.iter_mut().for_each(|p| *p /= total);
    Ok(FilterStep { belief: BeliefState(next), zero_likelihood: false, log_likelihood: total.ln() })
}

/// Posterior-mean prediction `Σ_i b_i · embedding_i`.
pub fn predict_state(belief: &BeliefState, embeddings: &[Vec<f64>]) -> Result<Vec<f64>, EstimatorError> {
    linalg::check_dim("state embeddings", belief.len(), embeddings.len())?;
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (p, e) in belief.0.iter().zip(embeddings) {
        linalg::check_dim("state embedding", dim, e.len())?;
        linalg::axpy(&mut out, *p, e);
    }
    Ok(out)
}

/// `e = s − ŝ`.
pub fn prediction_error(s: &[f64], predicted: &[f64]) -> Result<Vec<f64>, DimensionMismatch> {
    linalg::check_dim("prediction", s.len(), predicted.len())?;
    Ok(linalg::sub(s, predicted))
}

/// One logged episode: `(action, observation)` per step, starting from the
/// uniform prior.
pub type Episode = Vec<(usize, usize)>;

/// Log-likelihood of an episode (−∞ if impossible).
pub fn log_likelihood(episode: &[(usize, usize)], params: &DbnParams) -> Result<f64, EstimatorError> {
    let mut b = BeliefState::uniform(params.n_states());
    let mut ll = 0.0;
    for &(a, o) in episode {
        let step = forward_filter(&b, a, o, params)?;
        if step.zero_likelihood {
            return Ok(f64::NEG_INFINITY);
        }
        ll += step.log_likelihood;
        b = step.belief;
    }
    Ok(ll)
}

pub fn total_log_likelihood(episodes: &[Episode], params: &DbnParams) -> Result<f64, EstimatorError> {
    episodes.iter().map(|e| log_likelihood(e, params)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    pub params: DbnParams,
    /// Total log-likelihood of the data before each iteration and after the
    /// last one (`iters + 1` entries).
    pub log_likelihoods: Vec<f64>,
    /// Rows that received no expected mass in some iteration and were reset
    /// to uniform, as `(matrix name, row)`.
    pub degenerate_rows: Vec<(String, usize)>,
}

struct Counts {
    trans: Vec<Matrix>,
    emit: Matrix,
}

fn accumulate(episode: &[(usize, usize)], params: &DbnParams, counts: &mut Counts) -> Result<f64, ()> {
    let n = params.n_states();
    let len = episode.len();
    let mut alphas = Vec::with_capacity(len + 1);
    let mut scales = Vec::with_capacity(len);
    alphas.push(vec![1.0 / n as f64; n]);
    for &(a, o) in episode {
        let prev = alphas.last().expect("seeded");
        let pred = params.transitions[a].mul_vec_transposed(prev).expect("dims checked");
        let mut next: Vec<f64> = (0..n).map(|j| params.emission[(j, o)] * pred[j]).collect();
        let c: f64 = next.iter().sum();
        if !(c > 0.0) {
            return Err(());
        }
        next.iter_mut().for_each(|v| *v /= c);
        scales.push(c);
        alphas.push(next);
    }
    let mut beta = vec![1.0; n];
    for t in (1..=len).rev() {
        let (a, o) = episode[t - 1];
        let c = scales[t - 1];
        let alpha_prev = &alphas[t - 1];
        let tm = &params.transitions[a];
        let weighted: Vec<f64> = (0..n).map(|j| params.emission[(j, o)] * beta[j]).collect();
        for j in 0..n {
            counts.emit[(j, o)] += alphas[t][j] * beta[j];
        }
        for i in 0..n {
            for j in 0..n {
                counts.trans[a][(i, j)] += alpha_prev[i] * tm[(i, j)] * weighted[j] / c;
            }
        }
        beta = (0..n).map(|i| (0..n).map(|j| tm[(i, j)] * weighted[j]).sum::<f64>() / c).collect();
    }
    Ok(scales.iter().map(|c| c.ln()).sum())
}

fn normalize_rows(name: &str, m: &mut Matrix, degenerate: &mut Vec<(String, usize)>) {
    let cols = m.cols();
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / cols as f64);
            degenerate.push((name.to_owned(), i));
        }
    }
}

/// Baum-Welch re-estimation of transitions and emissions.
pub fn em_reestimate(episodes: &[Episode], init: &DbnParams, iters: usize) -> Result<EmReport, EstimatorError> {
    if iters == 0 || episodes.iter().all(Vec::is_empty) {
        return Err(EstimatorError::EmptyInput);
    }
    for e in episodes {
        for &(a, o) in e {
            if a >= init.n_actions() {
                return Err(EstimatorError::UnknownAction(a));
            }
            if o >= init.n_observations() {
                return Err(EstimatorError::UnknownObservation(o));
            }
        }
    }
    let (n, m) = (init.n_states(), init.n_observations());
    let mut params = init.clone();
    let mut lls = Vec::with_capacity(iters + 1);
    let mut degenerate = Vec::new();
    for _ in 0..iters {
        let mut counts = Counts { trans: vec![Matrix::zeros(n, n); params.n_actions()], emit: Matrix::zeros(n, m) };
        let mut ll = 0.0;
        for (k, e) in episodes.iter().enumerate() {
            ll += accumulate(e, &params, &mut counts).map_err(|_| EstimatorError::ZeroLikelihood { episode: k })?;
        }
        lls.push(ll);
        // Actions never taken keep their previous transition matrix.
        let used: Vec<bool> = (0..params.n_actions()).map(|a| episodes.iter().flatten().any(|&(act, _)| act == a)).collect();
        for (a, t) in counts.trans.iter_mut().enumerate() {
            if used[a] {
                normalize_rows(&format!("transition {a}"), t, &mut degenerate);
                params.transitions[a] = t.clone();
            }
        }
        normalize_rows("emission", &mut counts.emit, &mut degenerate);
        params.emission = counts.emit;
    }
    lls.push(total_log_likelihood(episodes, &params)?);
    Ok(EmReport { params, log_likelihoods: lls, degenerate_rows: degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle3() -> DbnParams {
        let t = Matrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        DbnParams::new(vec![t], Matrix::identity(3)).unwrap()
    }

    #[test]
    fn delta_belief_follows_deterministic_chain() {
        let p = cycle3();
        let mut b = BeliefState::delta(3, 0);
        for step in 1..=5 {
            let next = step % 3;
            let s = forward_filter(&b, 0, next, &p).unwrap();
            assert_eq!(s.belief, BeliefState::delta(3, next));
            b = s.belief;
        }
    }

    #[test]
    fn uniform_model_keeps_uniform_belief() {
        let p = DbnParams::uniform(4, 2, 1);
        let s = forward_filter(&BeliefState::uniform(4), 0, 1, &p).unwrap();
        for v in &s.belief.0 {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn impossible_observation_resets() {
        let p = cycle3();
        let s = forward_filter(&BeliefState::delta(3, 0), 0, 0, &p).unwrap();
        assert!(s.zero_likelihood);
        assert_eq!(s.belief, BeliefState::uniform(3));
        assert!(matches!(forward_filter(&BeliefState::uniform(3), 2, 0, &p), Err(EstimatorError::UnknownAction(2))));
    }

    #[test]
    fn posterior_mean() {
        let e = vec![vec![0.0, 2.0], vec![4.0, 0.0]];
        assert_eq!(predict_state(&BeliefState::delta(2, 1), &e).unwrap(), vec![4.0, 0.0]);
        assert_eq!(predict_state(&BeliefState::uniform(2), &e).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn em_fixed_point_on_deterministic_model() {
        let p = cycle3();
        let episode: Episode = (1..=30).map(|t| (0, t % 3)).collect();
        let report = em_reestimate(&[episode], &p, 1).unwrap();
        for (a, b) in report.params.transitions[0].to_rows().iter().flatten().zip(p.transitions[0].to_rows().iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(report.degenerate_rows.is_empty());
    }

    #[test]
    fn single_state_model() {
        let p = DbnParams::uniform(1, 3, 1);
        let report = em_reestimate(&[vec![(0, 2), (0, 1), (0, 2)]], &p, 3).unwrap();
        assert_eq!(report.params.transitions[0].to_rows(), vec![vec![1.0]]);
        let e = report.params.emission.row(0);
        assert!((e[2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let p = cycle3();
        assert_eq!(DbnParams::from_text(&p.to_text()).unwrap(), p);
        assert!(DbnParams::from_text("dbn 2").is_err());
    }
}
