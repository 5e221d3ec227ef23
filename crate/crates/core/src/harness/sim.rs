use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::model::{batch_gradient, generate_problem, init_weights, loss_bar, GradientSet, ProblemInstance, Weights};
use crate::optim::{apply_schedule, OptimizerState, Schedule};

/// A network, its problem and optimizer state, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub problem: ProblemInstance,
    pub weights: Weights,
    pub state: OptimizerState,
    pub schedule: Schedule,
    rng: ChaCha8Rng,
    step: u64,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let p = &cfg.problem;
        let mut problem = generate_problem(p.d, p.a_band, p.sigma, cfg.seeds.data)?.with_l2(p.l2_coeff);
        problem.symmetrize_noise = p.symmetrize_noise;
        problem.seed_noise = cfg.seeds.noise;
        let weights = init_weights(&cfg.network_config(), cfg.seeds.init)?;
        Ok(Self::from_parts(problem, weights, cfg.schedule.clone()))
    }

    /// Starts from explicit weights; the noise stream is seeded from the problem.
    pub fn from_parts(problem: ProblemInstance, weights: Weights, schedule: Schedule) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(problem.seed_noise),
            problem,
            weights,
            state: OptimizerState::new(),
            schedule,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn loss(&self) -> Result<f64> {
        loss_bar(&self.weights, &self.problem)
    }

    /// Takes one optimizer step and returns the gradient it used.
    pub fn advance(&mut self) -> Result<GradientSet> {
        let g = batch_gradient(&self.weights, &self.problem, &mut self.rng)?;
        apply_schedule(&self.schedule, &mut self.state, &mut self.weights, &g, self.step)?;
        self.step += 1;
        Ok(g)
    }

    pub fn segment(&self) -> usize {
        self.schedule.active_index(self.step)
    }
}
