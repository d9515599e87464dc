//! Federated ADMM on the consensus reformulation
//! `min (1/n) Σ fᵢ(xᵢ) + g(x̄)  s.t.  xᵢ = x̄`.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::problem::CompositeProblem;
use crate::prox::argmin_augmented_lagrangian;
use crate::trace::{ClientSnapshot, IterateFamily};
use crate::vector::ModelVector;

use super::{check_finite, for_clients, incremental_aggregate, local_request, FederatedState};

/// Primal `xᵢ`, dual `zᵢ`, and `x̂ᵢ = xᵢ + zᵢ/η`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmClient {
    pub x: ModelVector,
    pub z: ModelVector,
    pub xhat: ModelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedAdmmState {
    pub clients: Vec<AdmmClient>,
    pub xtilde: ModelVector,
    pub xbar: ModelVector,
}

impl FedAdmmState {
    /// `zᵢ = 0`, `xᵢ = x̂ᵢ = x̃ = x̄ = x⁰`.
    pub fn init(problem: &CompositeProblem, config: &RunConfig) -> Self {
        let x0 = config.initial_point(problem.dimension());
        let client = AdmmClient {
            x: x0.clone(),
            z: ModelVector::zeros(x0.len()),
            xhat: x0.clone(),
        };
        FedAdmmState {
            clients: vec![client; problem.n_clients()],
            xtilde: x0.clone(),
            xbar: x0,
        }
    }
}

impl FederatedState for FedAdmmState {
    const FAMILY: IterateFamily = IterateFamily::Admm;

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
                second: c.z.clone(),
                reflected: c.xhat.clone(),
            })
            .collect()
    }
}

/// One FedADMM round `k`; returns the sampled clients.
pub fn fedadmm_round(
    state: &mut FedAdmmState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<Vec<usize>> {
    if state.clients.len() != problem.n_clients() {
        return Err(Error::Config(format!(
            "state holds {} clients but the problem has {}",
            state.clients.len(),
            problem.n_clients()
        )));
    }
    let eta = config.eta;
    let sampled = config.sampling.draw(k, config.master_seed);
    if sampled.is_empty() {
        return Ok(sampled);
    }
    let updated = for_clients(&sampled, k, |i| {
        let c = &state.clients[i];
        let req = local_request(problem, config, k, i, &state.xbar, 1.0 / eta, &c.x);
        let x = argmin_augmented_lagrangian(problem.client(i), &state.xbar, &c.z, eta, &req)?.point;
        let z = c.z.lincomb(1.0, &(&x - &state.xbar), eta);
        let xhat = x.lincomb(1.0, &z, 1.0 / eta);
        check_finite(&xhat, k, i)?;
        Ok(AdmmClient { x, z, xhat })
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
    state.xbar = problem.regularizer().prox(&state.xtilde, 1.0 / eta);
    Ok(sampled)
}

/// FedPD: FedADMM restricted to `g ≡ 0` with every client active each round.
pub fn fedpd_round(
    state: &mut FedAdmmState,
    problem: &CompositeProblem,
    config: &RunConfig,
    k: usize,
) -> Result<Vec<usize>> {
    if !config.sampling.is_full() {
        return Err(Error::Config(
            "fedpd requires all clients to update at each communication round".into(),
        ));
    }
    if !problem.regularizer().is_zero() {
        return Err(Error::Config(format!(
            "fedpd requires g = 0, got {}",
            problem.regularizer()
        )));
    }
    fedadmm_round(state, problem, config, k)
}
