//! Phase-time detectors, the first-phase closed form for momentum SGD, the
//! Gaussian max/median oracle and the verdict logic comparing SGDM and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ProblemInstance, Weights};
use crate::stats::median;

/// Median of the chi-squared distribution with one degree of freedom.
pub const CHI2_1_MEDIAN: f64 = 0.454_936_423_119_572_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    pub d: usize,
    pub alpha: f64,
    pub eta: f64,
    pub epsilon: f64,
}

impl PhaseParams {
    pub fn new(d: usize, alpha: f64, eta: f64, epsilon: f64) -> Result<Self> {
        if d == 0 || !(alpha > 0.0) || !(eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "phase parameters need d >= 1, alpha > 0, eta > 0 (got {d}, {alpha}, {eta})"
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        Ok(Self { d, alpha, eta, epsilon })
    }

    /// `ε₀ = d^{1 − α/4} + ε ln √(d/ε)`.
    pub fn eps0(&self) -> f64 {
        let d = self.d as f64;
        d.powf(1.0 - self.alpha / 4.0) + self.epsilon * (d / self.epsilon).sqrt().ln()
    }

    pub fn sgd_thresholds(&self) -> SgdThresholds {
        SgdThresholds {
            weight: (self.d as f64).powf(-self.alpha / 2.0),
            overshoot: self.eps0().sqrt(),
            converge: self.epsilon,
        }
    }
}

/// Explicit detector thresholds. Larger values of `overshoot` and `converge`,
/// and smaller values of `weight`, are looser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdThresholds {
    /// A weight entry this large ends the first phase.
    pub weight: f64,
    /// Some `Eⱼ ≥ −overshoot` marks almost-overshooting.
    pub overshoot: f64,
    /// `‖E‖² ≤ converge` marks convergence.
    pub converge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamThresholds {
    /// `√(ηd)`: first phase ends once some `Eᵢ ≥ −error`.
    pub error: f64,
    /// `d√η`: `T_g` fires once some `|g₂ᵢ| ≤ grad`.
    pub grad: f64,
}

impl AdamThresholds {
    pub fn new(eta: f64, d: usize) -> Self {
        let d = d as f64;
        Self {
            error: (eta * d).sqrt(),
            grad: d * eta.sqrt(),
        }
    }
}

/// What the detectors need from one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSample {
    pub step: u64,
    /// Largest absolute entry over all layers.
    pub max_abs_weight: f64,
    /// Noiseless error `W_L⋯W₁ − A`, flattened.
    pub error: Vec<f64>,
    /// Exact gradient of the last layer, flattened.
    pub g_last: Vec<f64>,
}

impl PhaseSample {
    pub fn from_weights(step: u64, w: &Weights, p: &ProblemInstance) -> Result<Self> {
        let e = w.residual(&p.a)?;
        let k = w.depth();
        // The last layer's gradient is E · (W_{L−1}⋯W₁)ᵀ.
        let below = w.layers[..k - 1]
            .iter()
            .skip(1)
            .try_fold(w.layers[0].clone(), |acc, m| m.matmul(&acc))?;
        let g_last = e.matmul_transposed(&below)?;
        Ok(Self {
            step,
            max_abs_weight: w.layers.iter().fold(0.0, |m, l| m.max(l.max_abs())),
            error: e.into_vec(),
            g_last: g_last.into_vec(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SgdPhases {
    pub t1: Option<u64>,
    pub t2: Option<u64>,
    pub t3: Option<u64>,
}

impl SgdPhases {
    /// `T1 ≤ T2` and `T1 ≤ T3` whenever both sides are present.
    pub fn ordered(&self) -> bool {
        let le = |a: Option<u64>, b: Option<u64>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        };
        le(self.t1, self.t2) && le(self.t1, self.t3)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamPhases {
    pub t1: Option<u64>,
    pub tg: Option<u64>,
    pub tf_per_coordinate: Vec<Option<u64>>,
    /// Present only once every coordinate has flipped.
    pub tf: Option<u64>,
    pub ttilde: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub sgd: SgdPhases,
    pub adam: AdamPhases,
}

/// Single-pass detector for the momentum-SGD phase times.
#[derive(Debug, Clone)]
pub struct SgdPhaseDetector {
    th: SgdThresholds,
    times: SgdPhases,
}

impl SgdPhaseDetector {
    pub fn new(th: SgdThresholds) -> Self {
        Self {
            th,
            times: SgdPhases::default(),
        }
    }

    pub fn observe(&mut self, s: &PhaseSample) {
        let t = &mut self.times;
        if t.t1.is_none() && s.max_abs_weight >= self.th.weight {
            t.t1 = Some(s.step);
        }
        if t.t2.is_none() && s.error.iter().any(|&e| e >= -self.th.overshoot) {
            t.t2 = Some(s.step);
        }
        if t.t3.is_none() && s.error.iter().map(|e| e * e).sum::<f64>() <= self.th.converge {
            t.t3 = Some(s.step);
        }
    }

    pub fn times(&self) -> &SgdPhases {
        &self.times
    }
}

pub fn detect_sgd_phases<'a>(
    samples: impl IntoIterator<Item = &'a PhaseSample>,
    th: &SgdThresholds,
) -> SgdPhases {
    let mut det = SgdPhaseDetector::new(*th);
    for s in samples {
        det.observe(s);
    }
    det.times
}

/// Single-pass detector for the Adam phase times.
#[derive(Debug, Clone)]
pub struct AdamPhaseDetector {
    th: AdamThresholds,
    times: AdamPhases,
}

impl AdamPhaseDetector {
    pub fn new(th: AdamThresholds) -> Self {
        Self {
            th,
            times: AdamPhases::default(),
        }
    }

    pub fn observe(&mut self, s: &PhaseSample) {
        let th = self.th;
        let t = &mut self.times;
        match t.t1 {
            None => {
                if s.step > 0 && s.error.iter().any(|&e| e >= -th.error) {
                    t.t1 = Some(s.step);
                    t.tf_per_coordinate = vec![None; s.error.len()];
                }
            }
            Some(t1) if s.step > t1 => {
                if t.tg.is_none() && s.g_last.iter().any(|g| g.abs() <= th.grad) {
                    t.tg = Some(s.step);
                }
                for (slot, &e) in t.tf_per_coordinate.iter_mut().zip(&s.error) {
                    if slot.is_none() && e >= -th.error {
                        *slot = Some(s.step);
                    }
                }
                if t.tf.is_none() && t.tf_per_coordinate.iter().all(Option::is_some) {
                    t.tf = t.tf_per_coordinate.iter().flatten().max().copied();
                }
                t.ttilde = match (t.tg, t.tf) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            Some(_) => {}
        }
    }

    pub fn times(&self) -> &AdamPhases {
        &self.times
    }
}

pub fn detect_adam_phases<'a>(
    samples: impl IntoIterator<Item = &'a PhaseSample>,
    eta: f64,
    d: usize,
) -> AdamPhases {
    detect_adam_phases_with(samples, &AdamThresholds::new(eta, d))
}

pub fn detect_adam_phases_with<'a>(
    samples: impl IntoIterator<Item = &'a PhaseSample>,
    th: &AdamThresholds,
) -> AdamPhases {
    let mut det = AdamPhaseDetector::new(*th);
    for s in samples {
        det.observe(s);
    }
    det.times
}

/// Linear model of the last layer during the first phase of momentum SGD:
/// `W₂⁽ᵗ⁾ ≈ C₁λ₁ᵗ + C₂λ₂ᵗ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPhaseModel {
    pub lambda1: f64,
    pub lambda2: f64,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl FirstPhaseModel {
    pub fn new(w2_0: &[f64], w2_1: &[f64], a_norm: f64, eta: f64, beta: f64) -> Result<Self> {
        if w2_0.len() != w2_1.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} entries", w2_0.len()),
                got: format!("{} entries", w2_1.len()),
            });
        }
        if !(0.0..1.0).contains(&beta) || !(eta > 0.0) || !(a_norm > 0.0) {
            return Err(Error::Precondition(format!(
                "need eta > 0, ||A|| > 0 and beta in [0, 1) (got {eta}, {a_norm}, {beta})"
            )));
        }
        let gap = eta * a_norm / (1.0 - beta);
        if gap >= 1.0 {
            return Err(Error::Precondition(format!(
                "eta ||A|| / (1 - beta) = {gap} must be below 1"
            )));
        }
        let (l1, l2) = (1.0 - gap, 1.0 + gap);
        let span = l2 - l1;
        let c1 = w2_0
            .iter()
            .zip(w2_1)
            .map(|(&w0, &w1)| -(w1 - l2 * w0) / span)
            .collect();
        let c2 = w2_0
            .iter()
            .zip(w2_1)
            .map(|(&w0, &w1)| (w1 - l1 * w0) / span)
            .collect();
        Ok(Self {
            lambda1: l1,
            lambda2: l2,
            c1,
            c2,
        })
    }

    pub fn at(&self, t: u64) -> Vec<f64> {
        let (p1, p2) = (self.lambda1.powf(t as f64), self.lambda2.powf(t as f64));
        self.c1.iter().zip(&self.c2).map(|(a, b)| a * p1 + b * p2).collect()
    }
}

pub fn first_phase_closed_form(
    w2_0: &[f64],
    w2_1: &[f64],
    a: &Matrix,
    eta: f64,
    beta: f64,
    t: u64,
) -> Result<Vec<f64>> {
    Ok(FirstPhaseModel::new(w2_0, w2_1, a.frobenius_norm(), eta, beta)?.at(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub d: usize,
    pub trials: usize,
    pub mean: f64,
    /// Sample standard deviation of a single trial.
    pub std: f64,
    /// `std / √trials`.
    pub std_err: f64,
}

/// Monte-Carlo mean of `max Xᵢ² / median Xᵢ²` for `d` iid standard normals.
pub fn gaussian_ratio_oracle(d: usize, trials: usize, seed: u64) -> Result<OracleEstimate> {
    if d == 0 {
        return Err(Error::InvalidConfig("oracle dimension must be positive".into()));
    }
    if trials < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 trials, got {trials}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; d];
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        for x in buf.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = z * z;
        }
        let max = buf.iter().fold(0.0f64, |m, &x| m.max(x));
        ratios.push(max / median(&buf));
    }
    let n = trials as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(OracleEstimate {
        d,
        trials,
        mean,
        std: var.sqrt(),
        std_err: (var / n).sqrt(),
    })
}

/// Extreme-value estimate of `E[max Xᵢ²]` divided by the chi-squared median.
pub fn gaussian_ratio_envelope(d: usize) -> f64 {
    let d = d as f64;
    (2.0 * d.ln() - d.ln().ln() - std::f64::consts::PI.ln()) / CHI2_1_MEDIAN
}

/// One recorded step of a run as seen by the verdict logic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    pub loss: f64,
    pub rmed: [f64; 2],
}

/// Inclusive step window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

/// From the first record with `loss ≤ start_fraction · loss(0)` to the first
/// later record with `loss ≤ end_level`.
pub fn loss_window(trace: &[TracePoint], start_fraction: f64, end_level: f64) -> Option<Window> {
    let l0 = trace.first()?.loss;
    let i = trace.iter().position(|p| p.loss <= start_fraction * l0)?;
    let j = i + trace[i..].iter().position(|p| p.loss <= end_level)?;
    Some(Window {
        start: trace[i].step,
        end: trace[j].step,
    })
}

/// Up to `max_points` records spread evenly over the window.
pub fn sample_window(trace: &[TracePoint], w: Window, max_points: usize) -> Vec<TracePoint> {
    let inside: Vec<TracePoint> = trace
        .iter()
        .filter(|p| p.step >= w.start && p.step <= w.end)
        .copied()
        .collect();
    if inside.len() <= max_points || max_points < 2 {
        return inside;
    }
    let last = inside.len() - 1;
    (0..max_points)
        .map(|i| inside[(i * last + (max_points - 1) / 2) / (max_points - 1)])
        .collect()
}

pub const WINDOW_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTolerances {
    pub adam_band: (f64, f64),
    pub adam_fraction: f64,
    pub sgdm_min_median: f64,
    /// Allowed relative distance between the oracle curve and the SGDM medians.
    pub oracle_band: f64,
}

impl Default for GapTolerances {
    fn default() -> Self {
        Self {
            adam_band: (1.0, 1.3),
            adam_fraction: 0.95,
            sgdm_min_median: 2.5,
            oracle_band: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

impl Quantiles {
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            q10: q(0.1),
            q50: median(&v),
            q90: q(0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub sgdm: [Quantiles; 2],
    pub adam: [Quantiles; 2],
    /// Share of sampled Adam steps with both layers inside the band.
    pub adam_fraction_in_band: f64,
    /// Median SGDM minus median Adam, per layer.
    pub median_gap: [f64; 2],
    pub samples: (usize, usize),
    pub pass: bool,
}

/// Compares one SGDM run with one Adam run over their windows.
pub fn gap_report(
    sgdm: &[TracePoint],
    adam: &[TracePoint],
    windows: (Window, Window),
    tol: &GapTolerances,
) -> Result<PairReport> {
    let s = sample_window(sgdm, windows.0, WINDOW_SAMPLES);
    let a = sample_window(adam, windows.1, WINDOW_SAMPLES);
    if s.is_empty() || a.is_empty() {
        return Err(Error::Precondition(format!(
            "empty window: {} SGDM and {} Adam records",
            s.len(),
            a.len()
        )));
    }
    let layer = |pts: &[TracePoint], k: usize| pts.iter().map(|p| p.rmed[k]).collect::<Vec<_>>();
    let sq = [Quantiles::of(&layer(&s, 0)), Quantiles::of(&layer(&s, 1))];
    let aq = [Quantiles::of(&layer(&a, 0)), Quantiles::of(&layer(&a, 1))];
    let (lo, hi) = tol.adam_band;
    let inside = a
        .iter()
        .filter(|p| p.rmed.iter().all(|&r| r >= lo && r <= hi))
        .count();
    let fraction = inside as f64 / a.len() as f64;
    let sgdm_median = sq[0].q50.min(sq[1].q50);
    Ok(PairReport {
        median_gap: [sq[0].q50 - aq[0].q50, sq[1].q50 - aq[1].q50],
        adam_fraction_in_band: fraction,
        pass: fraction >= tol.adam_fraction && sgdm_median >= tol.sgdm_min_median,
        sgdm: sq,
        adam: aq,
        samples: (s.len(), a.len()),
    })
}

/// Per-dimension summary feeding the sweep verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub d: usize,
    pub sgdm_median: f64,
    pub adam_fraction: f64,
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepVerdict {
    /// Least-squares slope of the SGDM median against `ln d`; `None` with
    /// fewer than two distinct dimensions.
    pub slope: Option<f64>,
    pub notes: Vec<String>,
    pub adam_ok: bool,
    pub sgdm_floor_ok: bool,
    pub increasing: bool,
    pub slope_positive: bool,
    pub oracle_ok: bool,
    pub pass: bool,
}

pub fn sweep_verdict(points: &[SweepPoint], tol: &GapTolerances) -> SweepVerdict {
    let mut pts = points.to_vec();
    pts.sort_by_key(|p| p.d);
    let mut notes = Vec::new();
    let slope = fit_slope(
        &pts.iter().map(|p| (p.d as f64).ln()).collect::<Vec<_>>(),
        &pts.iter().map(|p| p.sgdm_median).collect::<Vec<_>>(),
    );
    if slope.is_none() {
        notes.push("slope undefined: fewer than two distinct dimensions".into());
    }
    let adam_ok = pts.iter().all(|p| p.adam_fraction >= tol.adam_fraction);
    let sgdm_floor_ok = pts
        .first()
        .is_some_and(|p| p.sgdm_median >= tol.sgdm_min_median);
    let increasing = pts.windows(2).all(|w| w[1].sgdm_median > w[0].sgdm_median);
    let slope_positive = slope.is_some_and(|s| s > 0.0);
    let oracle_ok = pts.iter().all(|p| match p.oracle {
        Some(o) => (o - p.sgdm_median).abs() <= tol.oracle_band * p.sgdm_median,
        None => true,
    });
    if pts.iter().any(|p| p.oracle.is_none()) {
        notes.push("oracle missing for some dimensions".into());
    }
    SweepVerdict {
        pass: adam_ok && sgdm_floor_ok && increasing && slope_positive && oracle_ok,
        slope,
        notes,
        adam_ok,
        sgdm_floor_ok,
        increasing,
        slope_positive,
        oracle_ok,
    }
}

fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EqualLossPair {
    pub level: f64,
    pub t_a: u64,
    pub t_b: u64,
    pub rmed_a: [f64; 2],
    pub rmed_b: [f64; 2],
    /// Fractional step where each trace crosses the level, by linear
    /// interpolation between neighbouring records.
    pub t_a_interp: f64,
    pub t_b_interp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EqualLossTable {
    pub pairs: Vec<EqualLossPair>,
    pub notes: Vec<String>,
}

/// Index of the first record at or below `level`, if the trace starts above it.
fn first_crossing(trace: &[TracePoint], level: f64) -> std::result::Result<usize, &'static str> {
    match trace.first() {
        None => Err("trace is empty"),
        Some(p) if p.loss <= level => Err("level is not below the initial loss"),
        Some(_) => trace
            .iter()
            .position(|p| p.loss <= level)
            .ok_or("level never reached"),
    }
}

fn interp_step(trace: &[TracePoint], i: usize, level: f64) -> f64 {
    let (a, b) = (trace[i - 1], trace[i]);
    let frac = (a.loss - level) / (a.loss - b.loss);
    a.step as f64 + frac * (b.step - a.step) as f64
}

/// Matches the two traces at each loss level by first downward crossing.
pub fn equal_loss_pairs(a: &[TracePoint], b: &[TracePoint], levels: &[f64]) -> EqualLossTable {
    let mut table = EqualLossTable::default();
    for &level in levels {
        match (first_crossing(a, level), first_crossing(b, level)) {
            (Ok(i), Ok(j)) => table.pairs.push(EqualLossPair {
                level,
                t_a: a[i].step,
                t_b: b[j].step,
                rmed_a: a[i].rmed,
                rmed_b: b[j].rmed,
                t_a_interp: interp_step(a, i, level),
                t_b_interp: interp_step(b, j, level),
            }),
            (ea, eb) => {
                let why = ea.err().or(eb.err()).unwrap_or("unknown");
                let which = if ea.is_err() { "first" } else { "second" };
                table
                    .notes
                    .push(format!("level {level}: omitted ({why} in the {which} run)"));
            }
        }
    }
    table
}

/// Steps for an exponential average with factor `beta1` to forget all but 1%
/// of its history.
pub fn momentum_horizon(beta1: f64) -> u64 {
    if beta1 <= 0.0 {
        return 0;
    }
    (0.01f64.ln() / beta1.ln()).ceil() as u64
}

/// Start of the sign-descent probe window: late enough that the moment
/// estimates only hold gradients of a fixed sign, and inside the second half
/// of the first phase.
pub fn sign_descent_probe_start(last_sign_change: u64, beta1: f64, t1: u64) -> u64 {
    (last_sign_change + momentum_horizon(beta1)).max(t1.div_ceil(2))
}
