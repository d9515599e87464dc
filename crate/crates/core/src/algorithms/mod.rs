//! Federated and parallel splitting schemes.
//!
//! Every round is bulk-synchronous: the active clients solve their local
//! problems independently (in parallel), then the server folds their updates
//! in ascending client order. Clients outside the sampled set keep every
//! field bit-for-bit.

use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::grad_mapping_norm_sq;
use crate::config::{DrInit, RunConfig};
use crate::error::{Error, Result};
use crate::problem::{evaluate_objective, CompositeProblem};
use crate::prox::{prox_inexact, ProxRequest};
use crate::seeds::{derive_seed, purpose};
use crate::trace::{ClientSnapshot, IterateFamily, RoundMetrics, RunTrace, TraceRow, Verbosity};
use crate::vector::{pairwise_mean, pairwise_sum, ModelVector};

mod drs;
mod fedadmm;
mod feddr;

pub use drs::{cov_drs_step, parallel_drs_step, reordered_drs_step, CovClient, CovDrsState};
pub use fedadmm::{fedadmm_round, fedpd_round, AdmmClient, FedAdmmState};
pub use feddr::{feddr2_round, feddr_round, DrClient, FedDrState};

/// Parallel DRS shares FedDR's per-client triple.
pub type DrsState = FedDrState;

/// Server-side view shared by every state type.
pub trait FederatedState {
    const FAMILY: IterateFamily;

    fn xbar(&self) -> &ModelVector;

    fn xtilde(&self) -> &ModelVector;

    fn snapshots(&self) -> Vec<ClientSnapshot>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FedAdmm,
    FedPd,
    FedDr,
    FedDr2,
    ParallelDrs,
    ReorderedDrs,
    CovDrs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::FedAdmm,
        Algorithm::FedPd,
        Algorithm::FedDr,
        Algorithm::FedDr2,
        Algorithm::ParallelDrs,
        Algorithm::ReorderedDrs,
        Algorithm::CovDrs,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::FedAdmm => "fedadmm",
            Algorithm::FedPd => "fedpd",
            Algorithm::FedDr => "feddr",
            Algorithm::FedDr2 => "feddr2",
            Algorithm::ParallelDrs => "drs",
            Algorithm::ReorderedDrs => "drs-reordered",
            Algorithm::CovDrs => "drs-cov",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Algorithm::ALL.into_iter().find(|a| a.id() == id)
    }

    /// Step of the server prox `prox_{step·g}`: `1/η` for the ADMM family,
    /// `η` for the DR family.
    pub fn server_step(self, eta: f64) -> f64 {
        match self {
            Algorithm::FedAdmm | Algorithm::FedPd => 1.0 / eta,
            _ => eta,
        }
    }

    /// The DRS forms update every client every round.
    pub fn requires_full_participation(self) -> bool {
        matches!(
            self,
            Algorithm::FedPd | Algorithm::ParallelDrs | Algorithm::ReorderedDrs | Algorithm::CovDrs
        )
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Approximate `prox_{step·fᵢ}(center)` for client `client` in round `round`,
/// warm-started at `warm`, to the schedule's accuracy `εᵢ,ₖ₊₁`.
pub(crate) fn local_request<'a>(
    problem: &CompositeProblem,
    config: &RunConfig,
    round: usize,
    client: usize,
    center: &'a ModelVector,
    step: f64,
    warm: &'a ModelVector,
) -> ProxRequest<'a> {
    ProxRequest {
        center,
        step,
        tolerance: config.eps_schedule.tolerance(round + 1),
        solver: config.local_solver,
        lipschitz: problem.lipschitz(),
        warm_start: Some(warm),
        rng_seed: derive_seed(config.master_seed, purpose::LOCAL_SOLVER, round as u64, Some(client as u64)),
    }
}

/// DR-family local step `prox_{η fᵢ}(center)`, warm-started at `warm`.
pub(crate) fn client_prox(
    problem: &CompositeProblem,
    config: &RunConfig,
    round: usize,
    client: usize,
    center: &ModelVector,
    warm: &ModelVector,
) -> Result<ModelVector> {
    let req = local_request(problem, config, round, client, center, config.eta, warm);
    let point = prox_inexact(problem.client(client), &req)?.point;
    check_finite(&point, round, client)?;
    Ok(point)
}

/// Runs `work` for every listed client in parallel, keeping the input order.
pub(crate) fn for_clients<T, F>(clients: &[usize], round: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    clients
        .par_iter()
        .map(|&i| work(i).map_err(|e| e.at(round, i)))
        .collect()
}

pub(crate) fn check_finite(v: &ModelVector, round: usize, client: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "client iterate",
            round: Some(round),
            client: Some(client),
        })
    }
}

/// `x̃ ← x̃ + (1/n) Σ Δx̂ᵢ`, with the deltas summed pairwise in the given order.
pub(crate) fn incremental_aggregate(xtilde: &mut ModelVector, deltas: &[ModelVector], n: usize) {
    if deltas.is_empty() {
        return;
    }
    let refs: Vec<&ModelVector> = deltas.iter().collect();
    let sum = pairwise_sum(&refs, xtilde.len());
    xtilde.axpy(1.0 / n as f64, &sum);
}

pub(crate) fn direct_mean<'a>(reflections: impl Iterator<Item = &'a ModelVector>, dim: usize) -> ModelVector {
    pairwise_mean(reflections, dim)
}

fn metrics(
    problem: &CompositeProblem,
    xbar: &ModelVector,
    server_step: f64,
    started: Instant,
) -> Result<RoundMetrics> {
    Ok(RoundMetrics {
        objective: evaluate_objective(problem, xbar)?,
        grad_mapping_sq: grad_mapping_norm_sq(problem, xbar, server_step)?,
        accuracy: problem.accuracy(xbar),
        cum_wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn record<S: FederatedState>(
    state: &S,
    round: usize,
    sampled: Vec<usize>,
    problem: &CompositeProblem,
    server_step: f64,
    verbosity: Verbosity,
    started: Instant,
) -> Result<TraceRow> {
    Ok(TraceRow {
        round,
        xbar: state.xbar().clone(),
        xtilde: state.xtilde().clone(),
        sampled,
        clients: (verbosity == Verbosity::FullIterates).then(|| state.snapshots()),
        metrics: metrics(problem, state.xbar(), server_step, started)?,
    })
}

fn drive<S, F>(
    algorithm: Algorithm,
    mut state: S,
    problem: &CompositeProblem,
    config: &RunConfig,
    verbosity: Verbosity,
    started: Instant,
    mut step: F,
) -> Result<RunTrace>
where
    S: FederatedState,
    F: FnMut(&mut S, usize) -> Result<Vec<usize>>,
{
    let server_step = algorithm.server_step(config.eta);
    let mut rows = Vec::with_capacity(config.rounds + 1);
    rows.push(record(&state, 0, Vec::new(), problem, server_step, verbosity, started)?);
    for k in 0..config.rounds {
        let sampled = step(&mut state, k)?;
        if !state.xbar().is_finite() || !state.xtilde().is_finite() {
            return Err(Error::NonFinite {
                context: "server iterate",
                round: Some(k),
                client: None,
            });
        }
        rows.push(record(&state, k + 1, sampled, problem, server_step, verbosity, started)?);
    }
    Ok(RunTrace {
        algorithm: algorithm.id().to_string(),
        family: S::FAMILY,
        rows,
    })
}

/// Runs `config.rounds` rounds of `algorithm` from its standard
/// initialization and records the trace.
pub fn run(
    algorithm: Algorithm,
    problem: &CompositeProblem,
    config: &RunConfig,
    verbosity: Verbosity,
) -> Result<RunTrace> {
    config.validate(problem.n_clients(), problem.dimension())?;
    if algorithm.requires_full_participation() && !config.sampling.is_full() {
        return Err(Error::Config(format!(
            "{algorithm} requires all clients to update at each communication round"
        )));
    }
    let started = Instant::now();
    let all: Vec<usize> = (0..problem.n_clients()).collect();
    match algorithm {
        Algorithm::FedAdmm => {
            let state = FedAdmmState::init(problem, config);
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                fedadmm_round(s, problem, config, k)
            })
        }
        Algorithm::FedPd => {
            let state = FedAdmmState::init(problem, config);
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                fedpd_round(s, problem, config, k)
            })
        }
        Algorithm::FedDr => {
            let state = match config.dr_init {
                DrInit::Prox => FedDrState::init(problem, config)?,
                DrInit::Consensus => FedDrState::uniform(config.initial_point(problem.dimension()), problem.n_clients()),
            };
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                feddr_round(s, problem, config, k)
            })
        }
        Algorithm::FedDr2 => {
            let state = CovDrsState::init(problem, config);
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                feddr2_round(s, problem, config, k)
            })
        }
        Algorithm::ParallelDrs => {
            let state = FedDrState::uniform(config.initial_point(problem.dimension()), problem.n_clients());
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                parallel_drs_step(s, problem, config, k).map(|_| all.clone())
            })
        }
        Algorithm::ReorderedDrs => {
            let state = FedDrState::uniform(config.initial_point(problem.dimension()), problem.n_clients());
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                reordered_drs_step(s, problem, config, k).map(|_| all.clone())
            })
        }
        Algorithm::CovDrs => {
            let state = CovDrsState::init(problem, config);
            drive(algorithm, state, problem, config, verbosity, started, |s, k| {
                cov_drs_step(s, problem, config, k).map(|_| all.clone())
            })
        }
    }
}
