use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::{write_alignment, write_records, AlignmentRecord, TrajectoryRecord};
use crate::harness::sim::Simulation;
use crate::hessian::{hessian_diagonals, hessian_full_two_layer, HessianDiagonal};
use crate::model::{GradientSet, Weights};
use crate::stats::{alignment_profile, r_diag, r_med, r_med_closed_form_with, rank1_fit, svd_diagnostics};
use crate::theory::{
    AdamPhaseDetector, AdamThresholds, PhaseParams, PhaseSample, PhaseTimes, SgdPhaseDetector,
    SgdThresholds,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// All configured steps were taken.
    Completed,
    /// Stopped early at `stop_at_loss`.
    ReachedTarget { step: u64 },
    /// The loss became non-finite at `step`.
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub params: PhaseParams,
    pub sgd_thresholds: SgdThresholds,
    pub adam_thresholds: AdamThresholds,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub records: Vec<TrajectoryRecord>,
    pub alignment: Vec<AlignmentRecord>,
    pub phases: Option<PhaseReport>,
    pub status: RunStatus,
    pub final_weights: Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub status: RunStatus,
    pub d: usize,
    pub records: usize,
    pub last_step: Option<u64>,
    pub final_loss: Option<f64>,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        let last = self.records.last();
        RunSummary {
            status: self.status,
            d: self.config.problem.d,
            records: self.records.len(),
            last_step: last.map(|r| r.step),
            final_loss: last.map(|r| r.loss_bar),
        }
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

/// Runs a configuration to completion, a target loss, or divergence.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_with_observer(cfg, |_, _| Ok(()))
}

/// As [`run_experiment`], calling `observer` after every optimizer step with
/// the simulation and the gradient that step used.
pub fn run_with_observer<F>(cfg: &ExperimentConfig, mut observer: F) -> Result<RunOutput>
where
    F: FnMut(&Simulation, &GradientSet) -> Result<()>,
{
    let mut sim = Simulation::new(cfg)?;
    let mut phases = if cfg.stats.record_phases {
        let first = &cfg.schedule.segments[0].optimizer;
        let params = PhaseParams::new(cfg.problem.d, cfg.network.alpha, first.eta, cfg.stats.phase_epsilon)?;
        let sgd_thresholds = params.sgd_thresholds();
        let adam_thresholds = AdamThresholds::new(first.eta, cfg.problem.d);
        Some((
            SgdPhaseDetector::new(sgd_thresholds),
            AdamPhaseDetector::new(adam_thresholds),
            PhaseReport {
                params,
                sgd_thresholds,
                adam_thresholds,
                times: PhaseTimes::default(),
            },
        ))
    } else {
        None
    };

    let mut records = Vec::new();
    let mut alignment = Vec::new();
    let mut status = RunStatus::Completed;
    loop {
        let t = sim.step();
        let loss = sim.loss()?;
        if !loss.is_finite() || !sim.weights.is_finite() {
            status = RunStatus::Diverged { step: t };
            break;
        }
        let mut forced = false;
        if let Some((sgd, adam, _)) = phases.as_mut() {
            let sample = PhaseSample::from_weights(t, &sim.weights, &sim.problem)?;
            let before = (sgd.times().clone(), adam.times().clone());
            sgd.observe(&sample);
            adam.observe(&sample);
            forced = (sgd.times(), adam.times()) != (&before.0, &before.1);
        }
        let reached = cfg.stop_at_loss.is_some_and(|level| loss <= level);
        let last = t >= cfg.steps || reached;
        let take = forced || last || t % cfg.record_every == 0;
        let mut diags = None;
        if take {
            let (rec, d) = snapshot(&sim, cfg, loss)?;
            records.push(rec);
            diags = d;
        }
        if reached {
            status = RunStatus::ReachedTarget { step: t };
            break;
        }
        if last {
            break;
        }
        let g = sim.advance()?;
        if cfg.stats.record_alignment && take {
            if let Some(diags) = diags {
                alignment.extend(alignment_rows(t, &diags, &g, &sim.state.direction)?);
            }
        }
        observer(&sim, &g)?;
    }

    Ok(RunOutput {
        config: cfg.clone(),
        records,
        alignment,
        phases: phases.map(|(sgd, adam, mut report)| {
            report.times = PhaseTimes {
                sgd: sgd.times().clone(),
                adam: adam.times().clone(),
            };
            report
        }),
        status,
        final_weights: sim.weights,
    })
}

/// `R_med` errors on a zero median; such steps leave the column empty.
fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn snapshot(
    sim: &Simulation,
    cfg: &ExperimentConfig,
    loss: f64,
) -> Result<(TrajectoryRecord, Option<Vec<HessianDiagonal>>)> {
    let w = &sim.weights;
    let e = w.residual(&sim.problem.a)?;
    let es = e.as_slice();
    let two_layer = w.depth() == 2 && w.output_dim() == 1;
    let opts = &cfg.stats.rmed;

    let need_diags = cfg.stats.hessian_route || cfg.stats.record_alignment;
    let diags = if need_diags { Some(hessian_diagonals(w)?) } else { None };
    let (mut l1_hess, mut l2_hess) = (None, None);
    if cfg.stats.hessian_route {
        let diags = diags.as_ref().expect("computed above");
        l1_hess = optional(r_med(&diags[0].values, opts))?;
        l2_hess = optional(r_med(&diags[1].values, opts))?;
    }
    let (mut l1_closed, mut l2_closed) = (None, None);
    if two_layer {
        match r_med_closed_form_with(w, opts) {
            Ok((a, b)) => {
                l1_closed = Some(a);
                l2_closed = Some(b);
            }
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }

    let mut r_diag_mean = None;
    if cfg.stats.record_hessian_full {
        let h = hessian_full_two_layer(w, &sim.problem)?.assemble();
        r_diag_mean = match r_diag(&h) {
            Ok(r) => Some(r.mean),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
    }

    let mut rec = TrajectoryRecord {
        step: sim.step(),
        loss_bar: loss,
        e_norm: e.frobenius_norm(),
        e_min: es.iter().copied().fold(f64::INFINITY, f64::min),
        e_max: es.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rmed_l1_hess: l1_hess,
        rmed_l1_closed: l1_closed,
        rmed_l2_hess: l2_hess,
        rmed_l2_closed: l2_closed,
        r_diag_mean,
        rank1_delta1: None,
        rank1_delta2: None,
        ru: None,
        rv: None,
        stable_rank: None,
        segment: sim.segment(),
    };
    if cfg.stats.record_svd && w.layers[0].max_abs() > 0.0 {
        let s = svd_diagnostics(&w.layers[0], cfg.stats.energy_threshold)?;
        rec.ru = Some(s.r_u);
        rec.rv = Some(s.r_v);
        rec.stable_rank = Some(s.stable_rank);
        let fit = rank1_fit(&w.layers[0], &w.layers[1])?;
        rec.rank1_delta1 = Some(fit.delta1);
        rec.rank1_delta2 = Some(fit.delta2);
    }
    Ok((rec, diags))
}

fn alignment_rows(
    step: u64,
    diags: &[HessianDiagonal],
    g: &GradientSet,
    direction: &[crate::matrix::Matrix],
) -> Result<Vec<AlignmentRecord>> {
    if direction.len() != diags.len() {
        // Non-adaptive optimizers have no separate update direction.
        return Ok(Vec::new());
    }
    diags
        .iter()
        .zip(&g.layers)
        .zip(direction)
        .map(|((h, gk), dk)| {
            let p = alignment_profile(&h.values, gk.as_slice(), dk.as_slice())?;
            Ok(AlignmentRecord {
                step,
                layer: h.layer,
                rho_g: p.rho_g,
                rho_adapt: p.rho_adapt,
                cv_g: p.cv_g,
                cv_adapt: p.cv_adapt,
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `records.csv`, `config.json`, `summary.json`, `phases.json` (when
/// phases are tracked) and `alignment.csv` (when alignment is recorded).
pub fn write_run_dir(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records(BufWriter::new(fs::File::create(dir.join("records.csv"))?), &out.records)?;
    write_json(&dir.join("config.json"), &out.config)?;
    write_json(&dir.join("summary.json"), &out.summary())?;
    if let Some(p) = &out.phases {
        write_json(&dir.join("phases.json"), p)?;
    }
    if out.config.stats.record_alignment {
        write_alignment(BufWriter::new(fs::File::create(dir.join("alignment.csv"))?), &out.alignment)?;
    }
    Ok(())
}

/// Runs and writes to `dir`, falling back to the configured output path.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<RunOutput> {
    let dir = dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.path.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory given".into()))?;
    let out = run_experiment(cfg)?;
    write_run_dir(&out, &dir)?;
    Ok(out)
}

/// Copies of `base` with one parameter set to each value in turn.
///
/// Supported parameters: `d`, `alpha`, `eta` (every segment), `sigma`,
/// `steps`, `seed` (all three streams).
pub fn sweep_configs(base: &ExperimentConfig, param: &str, values: &[String]) -> Result<Vec<(String, ExperimentConfig)>> {
    values
        .iter()
        .map(|raw| {
            let mut cfg = base.clone();
            let bad = || Error::InvalidConfig(format!("cannot parse {raw:?} for {param}"));
            match param {
                "d" => {
                    let d: usize = raw.parse().map_err(|_| bad())?;
                    if let Some(level) = cfg.stop_at_loss.as_mut() {
                        // Keep the target proportional to d.
                        *level *= d as f64 / base.problem.d as f64;
                    }
                    cfg.problem.d = d;
                }
                "alpha" => cfg.network.alpha = raw.parse().map_err(|_| bad())?,
                "eta" => {
                    let eta: f64 = raw.parse().map_err(|_| bad())?;
                    cfg.schedule.segments.iter_mut().for_each(|s| s.optimizer.eta = eta);
                }
                "sigma" => cfg.problem.sigma = raw.parse().map_err(|_| bad())?,
                "steps" => cfg.steps = raw.parse().map_err(|_| bad())?,
                "seed" => cfg.seeds = crate::harness::config::Seeds::all(raw.parse().map_err(|_| bad())?),
                other => return Err(Error::InvalidConfig(format!("unknown sweep parameter {other:?}"))),
            }
            cfg.validate()?;
            Ok((format!("{param}={raw}"), cfg))
        })
        .collect()
}

/// Runs every configuration in parallel, each into `root/<label>`.
pub fn run_sweep(configs: &[(String, ExperimentConfig)], root: &Path) -> Vec<(PathBuf, Result<RunSummary>)> {
    configs
        .par_iter()
        .map(|(label, cfg)| {
            let dir = root.join(label);
            let res = run_to_dir(cfg, Some(&dir)).map(|o| o.summary());
            (dir, res)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Preset;
    use crate::optim::OptimizerKind;

    fn small(kind: OptimizerKind, eta: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(Preset::Experiment, 8, kind, eta, 5);
        cfg.steps = 30;
        cfg.record_every = 10;
        cfg.stop_at_loss = None;
        cfg
    }

    #[test]
    fn zero_steps_gives_one_record() {
        let mut cfg = small(OptimizerKind::Adam, 1e-3);
        cfg.steps = 0;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].step, 0);
        assert_eq!(out.status, RunStatus::Completed);
    }

    #[test]
    fn stride_and_final_record() {
        let mut cfg = small(OptimizerKind::Sgdm, 1e-2);
        cfg.stats.record_phases = false;
        cfg.steps = 25;
        let out = run_experiment(&cfg).unwrap();
        let steps: Vec<u64> = out.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
    }

    #[test]
    fn routes_agree_on_every_record() {
        let mut cfg = small(OptimizerKind::Adam, 1e-2);
        cfg.record_every = 1;
        let out = run_experiment(&cfg).unwrap();
        for r in &out.records {
            let (a, b) = (r.rmed_l1_hess.unwrap(), r.rmed_l1_closed.unwrap());
            assert!((a - b).abs() <= 1e-10 * b, "{a} {b}");
            let (a, b) = (r.rmed_l2_hess.unwrap(), r.rmed_l2_closed.unwrap());
            assert!((a - b).abs() <= 1e-10 * b, "{a} {b}");
        }
    }

    #[test]
    fn divergence_keeps_partial_records() {
        let mut cfg = small(OptimizerKind::Sgdm, 50.0);
        cfg.steps = 2000;
        cfg.record_every = 1;
        let out = run_experiment(&cfg).unwrap();
        let RunStatus::Diverged { step } = out.status else {
            panic!("expected divergence, got {:?}", out.status);
        };
        assert_eq!(out.records.len() as u64, step);
        assert!(out.records.iter().all(|r| r.loss_bar.is_finite()));
    }

    #[test]
    fn phase_times_are_forced_into_records() {
        let mut cfg = small(OptimizerKind::Sgdm, 2e-2);
        cfg.steps = 400;
        cfg.record_every = 1000;
        let out = run_experiment(&cfg).unwrap();
        let times = &out.phases.as_ref().unwrap().times;
        let steps: Vec<u64> = out.records.iter().map(|r| r.step).collect();
        for t in [times.sgd.t1, times.sgd.t2, times.sgd.t3, times.adam.t1].into_iter().flatten() {
            assert!(steps.contains(&t), "{t} missing from {steps:?}");
        }
    }

    #[test]
    fn optional_columns_fill_when_enabled() {
        let mut cfg = small(OptimizerKind::Adam, 1e-2);
        cfg.stats.record_hessian_full = true;
        cfg.stats.record_svd = true;
        cfg.stats.record_alignment = true;
        let out = run_experiment(&cfg).unwrap();
        let r = &out.records[1];
        assert!(r.r_diag_mean.is_some() && r.ru.is_some() && r.rank1_delta1.is_some());
        assert!(!out.alignment.is_empty());
    }

    #[test]
    fn sweep_configs_apply_values() {
        let base = small(OptimizerKind::Adam, 1e-3);
        let list = sweep_configs(&base, "d", &["4".into(), "16".into()]).unwrap();
        assert_eq!(list[1].0, "d=16");
        assert_eq!(list[1].1.problem.d, 16);
        assert!(sweep_configs(&base, "depth", &["3".into()]).is_err());
        assert!(sweep_configs(&base, "d", &["x".into()]).is_err());
        let etas = sweep_configs(&base, "eta", &["0.5".into()]).unwrap();
        assert_eq!(etas[0].1.schedule.segments[0].optimizer.eta, 0.5);
    }
}
