use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::MAX_FULL_HESSIAN_DIM;
use crate::model::{NetworkConfig, DEFAULT_A_BAND};
use crate::optim::{OptimizerKind, OptimizerSpec, Schedule};
use crate::stats::{RmedOptions, DEFAULT_ENERGY_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    #[serde(default = "default_band")]
    pub a_band: (f64, f64),
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub l2_coeff: f64,
    #[serde(default)]
    pub symmetrize_noise: bool,
}

fn default_band() -> (f64, f64) {
    DEFAULT_A_BAND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_depth")]
    pub depth: usize,
    pub alpha: f64,
}

fn default_depth() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub rmed: RmedOptions,
    /// Also compute `R_med` from the explicit Hessian diagonal, which holds
    /// `d²` entries for the hidden layer. The closed form is always recorded
    /// for two-layer nets.
    pub hessian_route: bool,
    /// Full two-layer Hessian and `R_diag` at every record; needs `d ≤ 32`.
    pub record_hessian_full: bool,
    /// Spectrum and rank-1 diagnostics of `W₁` at every record.
    pub record_svd: bool,
    /// Per-record alignment of `|H_ii|` with gradient magnitudes.
    pub record_alignment: bool,
    /// Track phase times and force records where they fire.
    pub record_phases: bool,
    pub energy_threshold: f64,
    /// `ε` of the phase definitions.
    pub phase_epsilon: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            rmed: RmedOptions::default(),
            hessian_route: true,
            record_hessian_full: false,
            record_svd: false,
            record_alignment: false,
            record_phases: true,
            energy_threshold: DEFAULT_ENERGY_THRESHOLD,
            phase_epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub noise: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            init: seed,
            data: seed,
            noise: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub network: NetworkSpec,
    pub schedule: Schedule,
    pub steps: u64,
    #[serde(default = "default_stride")]
    pub record_every: u64,
    /// Stop at the first record with loss at or below this level.
    #[serde(default)]
    pub stop_at_loss: Option<f64>,
    #[serde(default)]
    pub stats: StatsConfig,
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_stride() -> u64 {
    1
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Noiseless, `α = 2`, Adam with `β₂ = β₁²` and bias correction, `ξ = 1e-12`.
    Theory,
    /// Noiseless, `α = 1`, standard Adam constants and a stabilized `R_med`.
    Experiment,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "theory" => Ok(Self::Theory),
            "experiment" => Ok(Self::Experiment),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn alpha(self) -> f64 {
        match self {
            Self::Theory => 2.0,
            Self::Experiment => 1.0,
        }
    }

    pub fn optimizer(self, kind: OptimizerKind, eta: f64) -> OptimizerSpec {
        match (self, kind) {
            (_, OptimizerKind::Sgdm) => OptimizerSpec::sgdm(eta, 0.9),
            (Self::Theory, OptimizerKind::Adam) => OptimizerSpec::adam_theory(eta, 0.9, 1e-12),
            (Self::Experiment, OptimizerKind::Adam) => OptimizerSpec::adam(eta, 0.9, 0.999, 1e-8),
            (_, OptimizerKind::Amsgrad) => OptimizerSpec::amsgrad(eta, 0.9, 0.999, 1e-8),
            (_, OptimizerKind::Adagrad) => OptimizerSpec::adagrad(eta, 1e-8),
            (_, OptimizerKind::Rmsprop) => OptimizerSpec::rmsprop(eta, 0.999, 1e-8),
        }
    }

    pub fn default_eta(self, kind: OptimizerKind) -> f64 {
        match kind {
            OptimizerKind::Sgdm => 1e-3,
            _ => 1e-4,
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, d: usize, kind: OptimizerKind, eta: f64, seed: u64) -> Self {
        let stabilizer = match preset {
            Preset::Theory => 0.0,
            Preset::Experiment => 0.001,
        };
        Self {
            problem: ProblemConfig {
                d,
                a_band: DEFAULT_A_BAND,
                sigma: 0.0,
                l2_coeff: 0.0,
                symmetrize_noise: false,
            },
            network: NetworkSpec {
                depth: 2,
                alpha: preset.alpha(),
            },
            schedule: Schedule::single(preset.optimizer(kind, eta)),
            steps: 20_000,
            record_every: 1,
            stop_at_loss: Some(1e-3 * d as f64),
            stats: StatsConfig {
                rmed: RmedOptions::stabilized(stabilizer),
                ..StatsConfig::default()
            },
            seeds: Seeds::all(seed),
            output: OutputConfig::default(),
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        let mut cfg = NetworkConfig::deep(self.problem.d, self.network.depth, self.network.alpha);
        cfg.theory_mode = true;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.d == 0 {
            return Err(Error::InvalidConfig("problem.d must be positive".into()));
        }
        if !(p.sigma >= 0.0) || !(p.l2_coeff >= 0.0) {
            return Err(Error::InvalidConfig("sigma and l2_coeff must be non-negative".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if self.stats.record_hessian_full {
            if p.d > MAX_FULL_HESSIAN_DIM {
                return Err(Error::InvalidConfig(format!(
                    "record_hessian_full needs d <= {MAX_FULL_HESSIAN_DIM}, got {}",
                    p.d
                )));
            }
            if self.network.depth != 2 {
                return Err(Error::InvalidConfig(
                    "record_hessian_full needs a two-layer network".into(),
                ));
            }
        }
        if self.stats.record_svd && self.network.depth != 2 {
            return Err(Error::InvalidConfig("record_svd needs a two-layer network".into()));
        }
        if !(self.stats.energy_threshold > 0.0 && self.stats.energy_threshold <= 1.0) {
            return Err(Error::InvalidConfig("energy_threshold must lie in (0, 1]".into()));
        }
        if !(self.stats.phase_epsilon > 0.0 && self.stats.phase_epsilon < 1.0) {
            return Err(Error::InvalidConfig("phase_epsilon must lie in (0, 1)".into()));
        }
        self.stats.rmed.validate()?;
        self.network_config().validate()?;
        self.schedule.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
