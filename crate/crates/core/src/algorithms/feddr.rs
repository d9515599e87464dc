//! Randomized Douglas–Rachford with partial participation.
//!
//! Each sampled client runs one relaxed DR step and ships `Δx̂ᵢ`; the server
//! keeps `x̃` incrementally and applies `prox_{ηg}`. FedDR-II is the
//! change-of-variables variant in which active clients report `x̂ = x + w`
//! before the server step and update `(x, w)` after it.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::problem::CompositeProblem;
use crate::prox::prox_inexact;
use crate::seeds::{derive_seed, purpose};
use crate::trace::{ClientSnapshot, IterateFamily};
use crate::vector::ModelVector;

use super::{
    check_finite, client_prox, direct_mean, for_clients, incremental_aggregate, CovClient, CovDrsState,
    FederatedState,
};

/// `(yᵢ, xᵢ, x̂ᵢ)` with `x̂ᵢ = 2xᵢ - yᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrClient {
    pub y: ModelVector,
    pub x: ModelVector,
    pub xhat: ModelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedDrState {
    pub clients: Vec<DrClient>,
    pub xtilde: ModelVector,
    pub xbar: ModelVector,
}

impl FedDrState {
    /// Standard start: `yᵢ = x⁰`, `xᵢ ≈ prox_{ηfᵢ}(x⁰)`, `x̂ᵢ = 2xᵢ - yᵢ`,
    /// `x̃ = mean x̂ᵢ`, `x̄ = x⁰`.
    pub fn init(problem: &CompositeProblem, config: &RunConfig) -> Result<Self> {
        let x0 = config.initial_point(problem.dimension());
        let all: Vec<usize> = (0..problem.n_clients()).collect();
        let clients = for_clients(&all, 0, |i| {
            let req = crate::prox::ProxRequest {
                center: &x0,
                step: config.eta,
                tolerance: config.eps_schedule.tolerance(0),
                solver: config.local_solver,
                lipschitz: problem.lipschitz(),
                warm_start: None,
                rng_seed: derive_seed(config.master_seed, purpose::INIT, 0, Some(i as u64)),
            };
            let x = prox_inexact(problem.client(i), &req)?.point;
            check_finite(&x, 0, i)?;
            let xhat = x.lincomb(2.0, &x0, -1.0);
            Ok(DrClient { y: x0.clone(), x, xhat })
        })?;
        let xtilde = direct_mean(clients.iter().map(|c| &c.xhat), x0.len());
        Ok(FedDrState {
            clients,
            xtilde,
            xbar: x0,
        })
    }

    /// Every client and both server vectors at `x0`.
    pub fn uniform(x0: ModelVector, n: usize) -> Self {
        let client = DrClient {
            y: x0.clone(),
            x: x0.clone(),
            xhat: x0.clone(),
        };
        FedDrState {
            clients: vec![client; n],
            xtilde: x0.clone(),
            xbar: x0,
        }
    }

    /// Explicit start, e.g. one mapped from another algorithm's state.
    pub fn from_parts(clients: Vec<DrClient>, xtilde: ModelVector, xbar: ModelVector) -> Result<Self> {
        let d = xbar.len();
        xtilde.check_dim(d)?;
        for c in &clients {
            c.y.check_dim(d)?;
            c.x.check_dim(d)?;
            c.xhat.check_dim(d)?;
        }
        Ok(FedDrState { clients, xtilde, xbar })
    }
}

impl FederatedState for FedDrState {
    const FAMILY: IterateFamily = IterateFamily::DouglasRachford;

    fn xbar(&self) -> &ModelVector {
        &self.xbar
    }

    fn xtilde(&self) -> &ModelVector {
        &self.xtilde
    }

    fn snapshots(&self) -> Vec<ClientSnapshot> {
        self.clients
            .iter()
            .map(|c| ClientSnapshot {
                first: c.y.clone(),
                second: c.x.clone(),
                reflected: c.xhat.clone(),
            })
            .collect()
    }
}

fn check_clients(n_state: usize, problem: &CompositeProblem) -> Result<()> {
    if n_state != problem.n_clients() {
        return Err(Error::Config(format!(
            "state holds {n_state} clients but the problem has {}",
            problem.n_clients()
        )));
    }
    Ok(())
}

/// One FedDR round `k`; returns the sampled clients.
pub fn feddr_round(
    state: &mut FedDrState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<Vec<usize>> {
    check_clients(state.clients.len(), problem)?;
    let sampled = config.sampling.draw(k, config.master_seed);
    if sampled.is_empty() {
        return Ok(sampled);
    }
    let updated = for_clients(&sampled, k, |i| {
        let c = &state.clients[i];
        let y = c.y.lincomb(1.0, &(&state.xbar - &c.x), config.alpha);
        let x = client_prox(problem, config, k, i, &y, &c.x)?;
        let xhat = x.lincomb(2.0, &y, -1.0);
        check_finite(&xhat, k, i)?;
        Ok(DrClient { y, x, xhat })
    })?;
    let deltas: Vec<ModelVector> = sampled
        .iter()
        .zip(&updated)
        .map(|(&i, c)| &c.xhat - &state.clients[i].xhat)
        .collect();
    for (&i, c) in sampled.iter().zip(updated) {
        state.clients[i] = c;
    }
    incremental_aggregate(&mut state.xtilde, &deltas, problem.n_clients());
    state.xbar = problem.regularizer().prox(&state.xtilde, config.eta);
    Ok(sampled)
}

/// One FedDR-II round `k`.
///
/// Sampled clients refresh `x̂ᵢ = xᵢ + wᵢ`; the server averages the latest
/// reported `x̂` of every client and applies `prox_{ηg}`; the sampled clients
/// then set `xᵢ ≈ prox_{ηfᵢ}(x̄ - wᵢ)` and `wᵢ += xᵢ - x̄`. A client that sits
/// out keeps the `x̂` it reported last, which predates its own last update.
pub fn feddr2_round(
    state: &mut CovDrsState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<Vec<usize>> {
    check_clients(state.clients.len(), problem)?;
    let sampled = config.sampling.draw(k, config.master_seed);
    if sampled.is_empty() {
        return Ok(sampled);
    }
    let reports: Vec<ModelVector> = sampled.iter().map(|&i| &state.clients[i].x + &state.clients[i].w).collect();
    let deltas: Vec<ModelVector> = sampled
        .iter()
        .zip(&reports)
        .map(|(&i, r)| r - &state.clients[i].xhat)
        .collect();
    let mut xtilde = state.xtilde.clone();
    incremental_aggregate(&mut xtilde, &deltas, problem.n_clients());
    let xbar = problem.regularizer().prox(&xtilde, config.eta);

    let updated = for_clients(&sampled, k, |i| {
        let c = &state.clients[i];
        let center = &xbar - &c.w;
        let x = client_prox(problem, config, k, i, &center, &c.x)?;
        let w = c.w.lincomb(1.0, &(&x - &xbar), 1.0);
        check_finite(&w, k, i)?;
        Ok((x, w))
    })?;
    for ((&i, (x, w)), xhat) in sampled.iter().zip(updated).zip(reports) {
        state.clients[i] = CovClient { x, w, xhat };
    }
    state.xtilde = xtilde;
    state.xbar = xbar;
    Ok(sampled)
}
