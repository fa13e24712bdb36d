//! Per-tick reactive controller: policy output plus error feedback and
//! variance damping, clamped to actuator limits.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::linalg::{self, check_dim, DimensionMismatch};

pub const DEFAULT_WINDOW: usize = 16;
pub const DEFAULT_U_MAX: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ReactiveError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("gains must be finite and non-negative")]
    InvalidGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactiveGains {
    pub zeta: f64,
    pub sigma: f64,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

impl ReactiveGains {
    pub fn new(zeta: f64, sigma: f64, kp: Vec<f64>, kd: Vec<f64>) -> Result<Self, ReactiveError> {
        check_dim("kd", kp.len(), kd.len())?;
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(zeta) || !ok(sigma) || !kp.iter().chain(&kd).all(|&v| ok(v)) {
            return Err(ReactiveError::InvalidGains);
        }
        Ok(Self { zeta, sigma, kp, kd })
    }

    pub fn uniform(dim: usize, zeta: f64, sigma: f64, kp: f64, kd: f64) -> Result<Self, ReactiveError> {
        Self::new(zeta, sigma, vec![kp; dim], vec![kd; dim])
    }

    pub fn dim(&self) -> usize {
        self.kp.len()
    }
}

/// Which estimate of the current state feeds the error term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorSource {
    /// Posterior mean of the phase filter.
    #[default]
    Estimator,
    /// Projection of the pipeline latent.
    LatentProjection,
}

/// Maps `(state, action, latent)` to a raw control vector.
pub trait Policy {
    fn act(&mut self, s: &[f64], action: &str, l: &[f64]) -> Vec<f64>;
}

/// Fixed control vector per action name; unknown actions give zeros.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl ScriptedPolicy {
    pub fn new(dim: usize) -> Self {
        Self { dim, table: BTreeMap::new() }
    }

    pub fn with(mut self, action: impl Into<String>, u: Vec<f64>) -> Result<Self, DimensionMismatch> {
        check_dim("scripted control", self.dim, u.len())?;
        self.table.insert(action.into(), u);
        Ok(self)
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _: &[f64], action: &str, _: &[f64]) -> Vec<f64> {
        self.table.get(action).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

/// `kp ⊙ e + kd ⊙ (e − e_prev)`.
pub fn pd_control(e: &[f64], prev_e: &[f64], gains: &ReactiveGains) -> Result<Vec<f64>, DimensionMismatch> {
    check_dim("error", gains.dim(), e.len())?;
    check_dim("previous error", gains.dim(), prev_e.len())?;
    Ok((0..e.len()).map(|i| gains.kp[i] * e[i] + gains.kd[i] * (e[i] - prev_e[i])).collect())
}

/// Per-component population standard deviation over the window.
pub fn window_std(window: &VecDeque<Vec<f64>>, dim: usize) -> Vec<f64> {
    let n = window.len();
    if n < 2 {
        return vec![0.0; dim];
    }
    (0..dim)
        .map(|k| {
            let mean = window.iter().map(|s| s[k]).sum::<f64>() / n as f64;
            let var = window.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / n as f64;
            var.sqrt()
        })
        .collect()
}

/// Damping that pushes each component back toward its window mean with a
/// magnitude equal to the window standard deviation.
pub fn var_react(s: &[f64], window: &VecDeque<Vec<f64>>) -> Vec<f64> {
    let n = window.len();
    if n < 2 {
        return vec![0.0; s.len()];
    }
    let std = window_std(window, s.len());
    (0..s.len())
        .map(|k| {
            let mean = window.iter().map(|w| w[k]).sum::<f64>() / n as f64;
            let dev = s[k] - mean;
            if dev == 0.0 {
                0.0
            } else {
                -std[k] * dev.signum()
            }
        })
        .collect()
}

pub fn clamp(u: &mut [f64], u_max: f64) {
    for v in u {
        *v = v.clamp(-u_max, u_max);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vec<f64>,
    /// The correction `ζ · (pd + σ · var)` before clamping.
    pub correction: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReactiveController {
    gains: ReactiveGains,
    u_max: f64,
    capacity: usize,
    window: VecDeque<Vec<f64>>,
    prev_error: Vec<f64>,
}

impl ReactiveController {
    pub fn new(gains: ReactiveGains) -> Self {
        let dim = gains.dim();
        Self { gains, u_max: DEFAULT_U_MAX, capacity: DEFAULT_WINDOW, window: VecDeque::new(), prev_error: vec![0.0; dim] }
    }

    pub fn with_u_max(mut self, u_max: f64) -> Self {
        self.u_max = u_max;
        self
    }

    pub fn with_window(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn gains(&self) -> &ReactiveGains {
        &self.gains
    }

    pub fn window(&self) -> &VecDeque<Vec<f64>> {
        &self.window
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.prev_error = vec![0.0; self.gains.dim()];
    }

    /// `u = clamp(policy(s, a, l) + ζ · (pd(e) + σ · var(s)))`.
    pub fn rvla_step(
        &mut self,
        policy: &mut dyn Policy,
        s: &[f64],
        action: &str,
        l: &[f64],
        e: &[f64],
    ) -> Result<ControlOutput, ReactiveError> {
        let d = self.gains.dim();
        check_dim("state", d, s.len())?;
        let raw = policy.act(s, action, l);
        check_dim("policy output", d, raw.len())?;
        let pd = pd_control(e, &self.prev_error, &self.gains)?;
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(s.to_vec());
        let var = var_react(s, &self.window);
        self.prev_error = e.to_vec();
        let mut correction = pd;
        linalg::axpy(&mut correction, self.gains.sigma, &var);
        correction.iter_mut().for_each(|c| *c *= self.gains.zeta);
        let mut u = linalg::add(&raw, &correction);
        clamp(&mut u, self.u_max);
        Ok(ControlOutput { u, correction })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_only() {
        let gains = ReactiveGains::uniform(2, 1.0, 0.0, 1.0, 0.0).unwrap();
        let mut c = ReactiveController::new(gains);
        let out = c.rvla_step(&mut ScriptedPolicy::new(2), &[0.0, 0.0], "x", &[], &[0.2, -0.1]).unwrap();
        assert_eq!(out.u, vec![0.2, -0.1]);
    }

    #[test]
    fn zero_zeta_is_policy() {
        let gains = ReactiveGains::uniform(2, 0.0, 3.0, 5.0, 5.0).unwrap();
        let mut p = ScriptedPolicy::new(2).with("move", vec![0.4, 2.0]).unwrap();
        let mut c = ReactiveController::new(gains);
        let out = c.rvla_step(&mut p, &[1.0, 1.0], "move", &[], &[0.3, 0.3]).unwrap();
        assert_eq!(out.u, vec![0.4, 1.0]);
    }

    #[test]
    fn damping_signs() {
        let mut w = VecDeque::new();
        for _ in 0..4 {
            w.push_back(vec![1.0, 0.5]);
        }
        assert_eq!(var_react(&[1.0, 0.5], &w), vec![0.0, 0.0]);
        let w: VecDeque<Vec<f64>> = [1.0, -1.0, 1.0].iter().map(|&v| vec![v]).collect();
        let d = var_react(&[1.0], &w);
        assert!(d[0] < 0.0);
    }

    #[test]
    fn bad_gains() {
        assert_eq!(ReactiveGains::uniform(1, -1.0, 0.0, 0.0, 0.0).unwrap_err(), ReactiveError::InvalidGains);
    }
}
