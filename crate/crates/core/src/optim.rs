//! Stepping rules.
//!
//! Every stepper folds the current gradient into its buffers *before* moving
//! the weights, so a momentum step at time `t` applies
//! `η Σ_{τ≤t} β^{t−τ} g^{(τ)}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{GradientSet, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgdm,
    Adam,
    Adagrad,
    Rmsprop,
    Amsgrad,
}

impl OptimizerKind {
    pub fn is_adaptive(self) -> bool {
        !matches!(self, OptimizerKind::Sgdm)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Amsgrad => "amsgrad",
        }
    }
}

fn default_beta() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_xi() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub eta: f64,
    /// Momentum for SGDM, squared-gradient decay for RMSprop.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_true")]
    pub bias_correction: bool,
    /// Heavy-ball momentum on top of the RMSprop direction.
    #[serde(default)]
    pub momentum: f64,
}

impl OptimizerSpec {
    pub fn sgdm(eta: f64, beta: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgdm,
            eta,
            beta,
            beta1: default_beta(),
            beta2: default_beta2(),
            xi: 0.0,
            bias_correction: true,
            momentum: 0.0,
        }
    }

    pub fn adam(eta: f64, beta1: f64, beta2: f64, xi: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            eta,
            beta: default_beta(),
            beta1,
            beta2,
            xi,
            bias_correction: true,
            momentum: 0.0,
        }
    }

    /// Adam with `β₂ = β₁²`, the coupling the sign-descent analysis needs.
    pub fn adam_theory(eta: f64, beta1: f64, xi: f64) -> Self {
        Self::adam(eta, beta1, beta1 * beta1, xi)
    }

    pub fn adagrad(eta: f64, xi: f64) -> Self {
        Self {
            kind: OptimizerKind::Adagrad,
            ..Self::adam(eta, 0.0, 0.0, xi)
        }
    }

    pub fn rmsprop(eta: f64, beta: f64, xi: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            beta,
            ..Self::adam(eta, 0.0, 0.0, xi)
        }
    }

    pub fn amsgrad(eta: f64, beta1: f64, beta2: f64, xi: f64) -> Self {
        Self {
            kind: OptimizerKind::Amsgrad,
            ..Self::adam(eta, beta1, beta2, xi)
        }
    }

    pub fn with_bias_correction(mut self, on: bool) -> Self {
        self.bias_correction = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        for (name, b) in [
            ("beta", self.beta),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("momentum", self.momentum),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.xi >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "xi must be non-negative, got {}",
                self.xi
            )));
        }
        Ok(())
    }

    /// Effective Adam step size `η √(1 − β₂^{t+1}) / (1 − β₁^{t+1})`.
    pub fn adam_step_size(&self, t: u64) -> f64 {
        if !self.bias_correction {
            return self.eta;
        }
        let n = (t + 1).min(i32::MAX as u64) as i32;
        self.eta * (1.0 - self.beta2.powi(n)).sqrt() / (1.0 - self.beta1.powi(n))
    }
}

/// Per-layer buffers. Unused buffers stay empty until a stepper needs them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    /// Steps taken since the buffers were last reset.
    pub step: u64,
    pub u: Vec<Matrix>,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub v_hat: Vec<Matrix>,
    pub accum: Vec<Matrix>,
    /// Direction applied by the last adaptive step, before scaling by the
    /// step size (`m/(√v + ξ)` for Adam).
    pub direction: Vec<Matrix>,
    /// Schedule segment the buffers belong to.
    pub segment: usize,
}

fn ensure(buf: &mut Vec<Matrix>, w: &Weights) {
    if buf.len() != w.layers.len() {
        *buf = w
            .layers
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
    }
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self, segment: usize) {
        *self = Self {
            segment,
            ..Self::default()
        };
    }

    fn check(&self, w: &Weights, g: &GradientSet) -> Result<()> {
        g.check_matches(w)?;
        for buf in [&self.u, &self.m, &self.v, &self.v_hat, &self.accum] {
            if !buf.is_empty() {
                if buf.len() != w.layers.len() {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} layers", w.layers.len()),
                        got: format!("{} buffer layers", buf.len()),
                    });
                }
                for (b, m) in buf.iter().zip(&w.layers) {
                    m.check_same_shape(b)?;
                }
            }
        }
        Ok(())
    }

    /// Applies one step of `spec` in place.
    pub fn apply(&mut self, w: &mut Weights, g: &GradientSet, spec: &OptimizerSpec) -> Result<()> {
        self.check(w, g)?;
        match spec.kind {
            OptimizerKind::Sgdm => self.apply_sgdm(w, g, spec),
            OptimizerKind::Adam | OptimizerKind::Amsgrad => self.apply_adam(w, g, spec),
            OptimizerKind::Adagrad => self.apply_adagrad(w, g, spec),
            OptimizerKind::Rmsprop => self.apply_rmsprop(w, g, spec),
        }
        self.step += 1;
        Ok(())
    }

    fn apply_sgdm(&mut self, w: &mut Weights, g: &GradientSet, spec: &OptimizerSpec) {
        ensure(&mut self.u, w);
        for ((wk, gk), uk) in w.layers.iter_mut().zip(&g.layers).zip(&mut self.u) {
            for ((x, &gi), ui) in wk
                .as_mut_slice()
                .iter_mut()
                .zip(gk.as_slice())
                .zip(uk.as_mut_slice())
            {
                *ui = spec.beta * *ui + gi;
                *x -= spec.eta * *ui;
            }
        }
    }

    fn apply_adam(&mut self, w: &mut Weights, g: &GradientSet, spec: &OptimizerSpec) {
        let amsgrad = spec.kind == OptimizerKind::Amsgrad;
        ensure(&mut self.m, w);
        ensure(&mut self.v, w);
        ensure(&mut self.direction, w);
        if amsgrad {
            ensure(&mut self.v_hat, w);
        }
        let lr = spec.adam_step_size(self.step);
        let (b1, b2, xi) = (spec.beta1, spec.beta2, spec.xi);
        for k in 0..w.layers.len() {
            let gk = g.layers[k].as_slice();
            let mk = self.m[k].as_mut_slice();
            let vk = self.v[k].as_mut_slice();
            let dk = self.direction[k].as_mut_slice();
            let wk = w.layers[k].as_mut_slice();
            for i in 0..gk.len() {
                let gi = gk[i];
                mk[i] = b1 * mk[i] + (1.0 - b1) * gi;
                vk[i] = b2 * vk[i] + (1.0 - b2) * gi * gi;
                let second = if amsgrad {
                    let vh = &mut self.v_hat[k].as_mut_slice()[i];
                    *vh = vh.max(vk[i]);
                    *vh
                } else {
                    vk[i]
                };
                dk[i] = safe_ratio(mk[i], second.sqrt() + xi);
                wk[i] -= lr * dk[i];
            }
        }
    }

    fn apply_adagrad(&mut self, w: &mut Weights, g: &GradientSet, spec: &OptimizerSpec) {
        ensure(&mut self.accum, w);
        ensure(&mut self.direction, w);
        for k in 0..w.layers.len() {
            let gk = g.layers[k].as_slice();
            let ak = self.accum[k].as_mut_slice();
            let dk = self.direction[k].as_mut_slice();
            let wk = w.layers[k].as_mut_slice();
            for i in 0..gk.len() {
                ak[i] += gk[i] * gk[i];
                dk[i] = safe_ratio(gk[i], ak[i].sqrt() + spec.xi);
                wk[i] -= spec.eta * dk[i];
            }
        }
    }

    fn apply_rmsprop(&mut self, w: &mut Weights, g: &GradientSet, spec: &OptimizerSpec) {
        ensure(&mut self.v, w);
        ensure(&mut self.direction, w);
        if spec.momentum > 0.0 {
            ensure(&mut self.u, w);
        }
        for k in 0..w.layers.len() {
            let gk = g.layers[k].as_slice();
            let vk = self.v[k].as_mut_slice();
            let dk = self.direction[k].as_mut_slice();
            let wk = w.layers[k].as_mut_slice();
            for i in 0..gk.len() {
                vk[i] = spec.beta * vk[i] + (1.0 - spec.beta) * gk[i] * gk[i];
                let mut step = safe_ratio(gk[i], vk[i].sqrt() + spec.xi);
                if spec.momentum > 0.0 {
                    let ui = &mut self.u[k].as_mut_slice()[i];
                    *ui = spec.momentum * *ui + step;
                    step = *ui;
                }
                dk[i] = step;
                wk[i] -= spec.eta * step;
            }
        }
    }
}

/// `num / den`, with `0` in place of the `0/0` that arises when a coordinate
/// has never seen a nonzero gradient and `ξ = 0`.
fn safe_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn check_kind(spec: &OptimizerSpec, allowed: &[OptimizerKind]) -> Result<()> {
    if !allowed.contains(&spec.kind) {
        return Err(Error::InvalidConfig(format!(
            "stepper does not handle optimizer kind {:?}",
            spec.kind
        )));
    }
    Ok(())
}

fn step_pure(
    state: &OptimizerState,
    w: &Weights,
    g: &GradientSet,
    spec: &OptimizerSpec,
) -> Result<(Weights, OptimizerState)> {
    let mut w = w.clone();
    let mut state = state.clone();
    state.apply(&mut w, g, spec)?;
    Ok((w, state))
}

/// `u ← βu + g`, `W ← W − ηu`.
pub fn sgdm_step(
    state: &OptimizerState,
    w: &Weights,
    g: &GradientSet,
    spec: &OptimizerSpec,
) -> Result<(Weights, OptimizerState)> {
    check_kind(spec, &[OptimizerKind::Sgdm])?;
    step_pure(state, w, g, spec)
}

/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, `W ← W − η_t m/(√v + ξ)`.
pub fn adam_step(
    state: &OptimizerState,
    w: &Weights,
    g: &GradientSet,
    spec: &OptimizerSpec,
) -> Result<(Weights, OptimizerState)> {
    check_kind(spec, &[OptimizerKind::Adam])?;
    step_pure(state, w, g, spec)
}

/// Adagrad, RMSprop and AMSGrad.
pub fn aux_adaptive_step(
    state: &OptimizerState,
    w: &Weights,
    g: &GradientSet,
    spec: &OptimizerSpec,
) -> Result<(Weights, OptimizerState)> {
    check_kind(
        spec,
        &[
            OptimizerKind::Adagrad,
            OptimizerKind::Rmsprop,
            OptimizerKind::Amsgrad,
        ],
    )?;
    step_pure(state, w, g, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_step: u64,
    pub optimizer: OptimizerSpec,
}

/// Piecewise-constant optimizer schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<Segment>,
    /// Keep optimizer buffers across a switch instead of zeroing them.
    #[serde(default)]
    pub carry_buffers: bool,
}

impl Schedule {
    pub fn single(spec: OptimizerSpec) -> Self {
        Self {
            segments: vec![Segment {
                start_step: 0,
                optimizer: spec,
            }],
            carry_buffers: false,
        }
    }

    /// `first` until `switch_at`, then `second`.
    pub fn switch(first: OptimizerSpec, second: OptimizerSpec, switch_at: u64) -> Self {
        Self {
            segments: vec![
                Segment {
                    start_step: 0,
                    optimizer: first,
                },
                Segment {
                    start_step: switch_at,
                    optimizer: second,
                },
            ],
            carry_buffers: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.segments.first() else {
            return Err(Error::InvalidConfig("schedule has no segments".into()));
        };
        if first.start_step != 0 {
            return Err(Error::InvalidConfig(
                "first schedule segment must start at step 0".into(),
            ));
        }
        for pair in self.segments.windows(2) {
            if pair[1].start_step <= pair[0].start_step {
                return Err(Error::InvalidConfig(
                    "schedule start steps must be strictly increasing".into(),
                ));
            }
        }
        for s in &self.segments {
            s.optimizer.validate()?;
        }
        Ok(())
    }

    /// Index of the segment active at step `t`.
    pub fn active_index(&self, t: u64) -> usize {
        self.segments
            .iter()
            .rposition(|s| s.start_step <= t)
            .unwrap_or(0)
    }

    pub fn active(&self, t: u64) -> &OptimizerSpec {
        &self.segments[self.active_index(t)].optimizer
    }
}

/// Steps with whichever segment is active at `t`. Entering a new segment
/// zeroes the buffers unless the schedule carries them over. An empty
/// gradient set is a no-op.
pub fn step_with_schedule(
    schedule: &Schedule,
    state: &OptimizerState,
    w: &Weights,
    g: &GradientSet,
    t: u64,
) -> Result<(Weights, OptimizerState)> {
    let mut w = w.clone();
    let mut state = state.clone();
    apply_schedule(schedule, &mut state, &mut w, g, t)?;
    Ok((w, state))
}

/// In-place form of [`step_with_schedule`].
pub fn apply_schedule(
    schedule: &Schedule,
    state: &mut OptimizerState,
    w: &mut Weights,
    g: &GradientSet,
    t: u64,
) -> Result<()> {
    if g.layers.is_empty() {
        return Ok(());
    }
    let idx = schedule.active_index(t);
    if idx != state.segment {
        if schedule.carry_buffers {
            state.segment = idx;
        } else {
            state.reset(idx);
        }
    }
    state.apply(w, g, &schedule.segments[idx].optimizer)
}
