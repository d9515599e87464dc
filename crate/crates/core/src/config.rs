//! Run configuration shared by every algorithm.

use crate::error::{Error, Result};
use crate::sampling::SamplingScheme;
use crate::vector::ModelVector;

/// How a client computes its (approximate) proximal step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalSolver {
    /// Closed-form proximal operator; fails on losses without one.
    ExactProx,
    /// Full-gradient descent on the proximal subproblem.
    GradientDescent { iters: usize, lr: f64 },
    /// Mini-batch stochastic gradient descent on the proximal subproblem.
    StochasticGd { iters: usize, lr: f64, batch: usize },
}

impl LocalSolver {
    /// Local protocol used for the synthetic experiments: 300 SGD steps with
    /// learning rate 0.01 and mini-batches of 2.
    pub const fn sgd_default() -> Self {
        LocalSolver::StochasticGd {
            iters: 300,
            lr: 0.01,
            batch: 2,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, LocalSolver::ExactProx)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LocalSolver::ExactProx => Ok(()),
            LocalSolver::GradientDescent { iters, lr } => check_budget(iters, lr, 1),
            LocalSolver::StochasticGd { iters, lr, batch } => check_budget(iters, lr, batch),
        }
    }
}

fn check_budget(iters: usize, lr: f64, batch: usize) -> Result<()> {
    if iters == 0 || batch == 0 || !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!(
            "local solver budget must be positive (iters={iters}, lr={lr}, batch={batch})"
        )));
    }
    Ok(())
}

/// Accuracy `εᵢ,ₖ` demanded of the local solve that produces round-`k` iterates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsSchedule {
    /// `εᵢ,ₖ = eps0 / (k + 1)`, enforced after every local solve.
    Harmonic { eps0: f64 },
    /// Fixed local budget with no accuracy requirement.
    Unchecked,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule::Harmonic { eps0: 0.0 }
    }
}

impl EpsSchedule {
    pub fn tolerance(&self, k: usize) -> Option<f64> {
        match *self {
            EpsSchedule::Harmonic { eps0 } => Some(eps0 / (k as f64 + 1.0)),
            EpsSchedule::Unchecked => None,
        }
    }

    /// `D` with `(1/n) Σᵢ Σₖ εᵢ,ₖ² ≤ D` for every horizon: `eps0² π² / 6`.
    pub fn square_sum_bound(&self) -> Option<f64> {
        match *self {
            EpsSchedule::Harmonic { eps0 } => Some(eps0 * eps0 * std::f64::consts::PI.powi(2) / 6.0),
            EpsSchedule::Unchecked => None,
        }
    }
}

/// Client start of FedDR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DrInit {
    /// `yᵢ = x⁰`, `xᵢ ≈ prox_{ηfᵢ}(x⁰)`.
    #[default]
    Prox,
    /// `yᵢ = xᵢ = x̂ᵢ = x⁰`, the image of FedADMM's start.
    Consensus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// FedADMM penalty, or the FedDR / DRS proximal step.
    pub eta: f64,
    /// FedDR relaxation.
    pub alpha: f64,
    pub rounds: usize,
    pub sampling: SamplingScheme,
    pub eps_schedule: EpsSchedule,
    pub master_seed: u64,
    pub local_solver: LocalSolver,
    /// Initial model; zeros when absent.
    pub x0: Option<ModelVector>,
    pub dr_init: DrInit,
}

impl RunConfig {
    pub fn new(eta: f64, rounds: usize, sampling: SamplingScheme) -> Self {
        RunConfig {
            eta,
            alpha: 1.0,
            rounds,
            sampling,
            eps_schedule: EpsSchedule::default(),
            master_seed: 0,
            local_solver: LocalSolver::ExactProx,
            x0: None,
            dr_init: DrInit::Prox,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_solver(mut self, solver: LocalSolver) -> Self {
        self.local_solver = solver;
        self
    }

    pub fn with_eps(mut self, eps: EpsSchedule) -> Self {
        self.eps_schedule = eps;
        self
    }

    pub fn with_dr_init(mut self, init: DrInit) -> Self {
        self.dr_init = init;
        self
    }

    pub fn with_x0(mut self, x0: ModelVector) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn n_clients(&self) -> usize {
        self.sampling.n()
    }

    pub fn initial_point(&self, dim: usize) -> ModelVector {
        self.x0.clone().unwrap_or_else(|| ModelVector::zeros(dim))
    }

    /// Checks the configuration against a problem with `n` clients in
    /// dimension `dim`.
    pub fn validate(&self, n: usize, dim: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.sampling.n() != n {
            return Err(Error::Config(format!(
                "sampling scheme covers {} clients but the problem has {n}",
                self.sampling.n()
            )));
        }
        self.sampling.validate_proper()?;
        self.local_solver.validate()?;
        if let EpsSchedule::Harmonic { eps0 } = self.eps_schedule {
            if !(eps0 >= 0.0 && eps0.is_finite()) {
                return Err(Error::Config(format!("eps0 must be nonnegative, got {eps0}")));
            }
        }
        if let Some(x0) = &self.x0 {
            x0.check_dim(dim)?;
        }
        Ok(())
    }
}
