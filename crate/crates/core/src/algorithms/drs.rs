//! Full-participation Douglas–Rachford splitting in three equivalent orders.
//!
//! * parallel: `y += α(x̄ - x)`, `x = prox(y)`, `x̂ = 2x - y`, then the server
//!   averages and applies `prox_{ηg}`.
//! * reordered (`α = 1`): the server step comes first, then
//!   `x' = prox(y + x̄ - x)` and `y' = y + x̄ - x`.
//! * change of variables `w = x - y`: `x̂ = x + w`, server step,
//!   `x' = prox(x̄ - w)`, `w' = w + x' - x̄`.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::problem::CompositeProblem;
use crate::trace::{ClientSnapshot, IterateFamily};
use crate::vector::ModelVector;

use super::{client_prox, direct_mean, for_clients, DrClient, FederatedState, FedDrState};

/// `(xᵢ, wᵢ, x̂ᵢ)` of the change-of-variables form.
#[derive(Clone, Debug, PartialEq)]
pub struct CovClient {
    pub x: ModelVector,
    pub w: ModelVector,
    pub xhat: ModelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovDrsState {
    pub clients: Vec<CovClient>,
    pub xtilde: ModelVector,
    pub xbar: ModelVector,
}

impl CovDrsState {
    /// `xᵢ = x̂ᵢ = x̃ = x̄ = x⁰`, `wᵢ = 0`.
    pub fn init(problem: &CompositeProblem, config: &RunConfig) -> Self {
        let x0 = config.initial_point(problem.dimension());
        let client = CovClient {
            x: x0.clone(),
            w: ModelVector::zeros(x0.len()),
            xhat: x0.clone(),
        };
        CovDrsState {
            clients: vec![client; problem.n_clients()],
            xtilde: x0.clone(),
            xbar: x0,
        }
    }

    /// The `w = x - y` image of a `(y, x, x̂)` state.
    pub fn from_dr(state: &FedDrState) -> Self {
        CovDrsState {
            clients: state
                .clients
                .iter()
                .map(|c| CovClient {
                    x: c.x.clone(),
                    w: &c.x - &c.y,
                    xhat: c.xhat.clone(),
                })
                .collect(),
            xtilde: state.xtilde.clone(),
            xbar: state.xbar.clone(),
        }
    }
}

impl FederatedState for CovDrsState {
    const FAMILY: IterateFamily = IterateFamily::ChangeOfVariables;

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
                first: c.x.clone(),
                second: c.w.clone(),
                reflected: c.xhat.clone(),
            })
            .collect()
    }
}

fn all_clients(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn server_step(problem: &CompositeProblem, config: &RunConfig, xtilde: &ModelVector) -> ModelVector {
    problem.regularizer().prox(xtilde, config.eta)
}

/// One round of parallel DRS with relaxation `config.alpha`.
pub fn parallel_drs_step(
    state: &mut FedDrState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<()> {
    let n = problem.n_clients();
    let updated = for_clients(&all_clients(n), k, |i| {
        let c = &state.clients[i];
        let y = c.y.lincomb(1.0, &(&state.xbar - &c.x), config.alpha);
        let x = client_prox(problem, config, k, i, &y, &c.x)?;
        let xhat = x.lincomb(2.0, &y, -1.0);
        Ok(DrClient { y, x, xhat })
    })?;
    state.clients = updated;
    state.xtilde = direct_mean(state.clients.iter().map(|c| &c.xhat), problem.dimension());
    state.xbar = server_step(problem, config, &state.xtilde);
    Ok(())
}

/// One round of the reordered form. Its recorded `x̄` lags the parallel form
/// by one round.
pub fn reordered_drs_step(
    state: &mut FedDrState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<()> {
    if config.alpha != 1.0 {
        return Err(Error::Config(format!(
            "the reordered form is defined for alpha = 1, got {}",
            config.alpha
        )));
    }
    let dim = problem.dimension();
    let reflected: Vec<ModelVector> = state.clients.iter().map(|c| c.x.lincomb(2.0, &c.y, -1.0)).collect();
    let xtilde = direct_mean(reflected.iter(), dim);
    let xbar = server_step(problem, config, &xtilde);
    let n = problem.n_clients();
    let updated = for_clients(&all_clients(n), k, |i| {
        let c = &state.clients[i];
        let y = c.y.lincomb(1.0, &(&xbar - &c.x), 1.0);
        let x = client_prox(problem, config, k, i, &y, &c.x)?;
        Ok(DrClient {
            y,
            x,
            xhat: reflected[i].clone(),
        })
    })?;
    state.clients = updated;
    state.xtilde = xtilde;
    state.xbar = xbar;
    Ok(())
}

/// One round of the change-of-variables form.
pub fn cov_drs_step(
    state: &mut CovDrsState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<()> {
    let dim = problem.dimension();
    let reflected: Vec<ModelVector> = state.clients.iter().map(|c| &c.x + &c.w).collect();
    let xtilde = direct_mean(reflected.iter(), dim);
    let xbar = server_step(problem, config, &xtilde);
    let n = problem.n_clients();
    let updated = for_clients(&all_clients(n), k, |i| {
        let c = &state.clients[i];
        let center = &xbar - &c.w;
        let x = client_prox(problem, config, k, i, &center, &c.x)?;
        let w = c.w.lincomb(1.0, &(&x - &xbar), 1.0);
        Ok(CovClient {
            x,
            w,
            xhat: reflected[i].clone(),
        })
    })?;
    state.clients = updated;
    state.xtilde = xtilde;
    state.xbar = xbar;
    Ok(())
}
