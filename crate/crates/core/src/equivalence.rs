//! FedADMM and FedDR as the same method under a change of variables.
//!
//! With penalty `η` on the ADMM side and step `1/η`, `α = 1` on the DR side:
//!
//! ```text
//! s = x - z/η     u = x     û = x + z/η     v̄ = x̄
//! ```
//!
//! The map is a bijection on client triples, and it carries one FedADMM round
//! onto one FedDR round with the same sampled set. [`lockstep_verify`] checks
//! this on live runs.

use std::fmt::Write as _;

use crate::algorithms::{fedadmm_round, feddr_round, DrClient, FedAdmmState, FedDrState};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::problem::CompositeProblem;
use crate::vector::ModelVector;

/// FedDR image of one FedADMM client plus the server point.
#[derive(Clone, Debug, PartialEq)]
pub struct DrImage {
    pub s: ModelVector,
    pub u: ModelVector,
    pub uhat: ModelVector,
    pub vbar: ModelVector,
}

/// FedADMM preimage of one FedDR client plus the server point.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmPreimage {
    pub x: ModelVector,
    pub z: ModelVector,
    pub xbar: ModelVector,
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("eta must be positive, got {eta}")))
    }
}

pub fn map_admm_to_dr(x: &ModelVector, z: &ModelVector, xbar: &ModelVector, eta: f64) -> Result<DrImage> {
    check_eta(eta)?;
    z.check_dim(x.len())?;
    xbar.check_dim(x.len())?;
    Ok(DrImage {
        s: x.lincomb(1.0, z, -1.0 / eta),
        u: x.clone(),
        uhat: x.lincomb(1.0, z, 1.0 / eta),
        vbar: xbar.clone(),
    })
}

pub fn map_dr_to_admm(s: &ModelVector, u: &ModelVector, xbar: &ModelVector, eta: f64) -> Result<AdmmPreimage> {
    check_eta(eta)?;
    s.check_dim(u.len())?;
    xbar.check_dim(u.len())?;
    Ok(AdmmPreimage {
        x: u.clone(),
        z: u.lincomb(eta, s, -eta),
        xbar: xbar.clone(),
    })
}

/// FedDR start that corresponds to a FedADMM state.
pub fn dr_state_from_admm(state: &FedAdmmState, eta: f64) -> Result<FedDrState> {
    let clients = state
        .clients
        .iter()
        .map(|c| {
            let img = map_admm_to_dr(&c.x, &c.z, &state.xbar, eta)?;
            Ok(DrClient {
                y: img.s,
                x: img.u,
                xhat: img.uhat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FedDrState::from_parts(clients, state.xtilde.clone(), state.xbar.clone())
}

/// FedDR counterpart of a FedADMM configuration: step `1/η`, `α = 1`.
pub fn dr_config_for(admm: &RunConfig) -> RunConfig {
    RunConfig {
        eta: 1.0 / admm.eta,
        alpha: 1.0,
        ..admm.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceRow {
    pub round: usize,
    pub dev_s: f64,
    pub dev_u: f64,
    pub dev_uhat: f64,
    pub dev_vbar: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl EquivalenceRow {
    pub fn max_deviation(&self) -> f64 {
        self.dev_s.max(self.dev_u).max(self.dev_uhat).max(self.dev_vbar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_deviation(&self) -> f64 {
        self.rows.iter().map(EquivalenceRow::max_deviation).fold(0.0, f64::max)
    }

    pub fn first_failure(&self) -> Option<&EquivalenceRow> {
        self.rows.iter().find(|r| !r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,dev_s,dev_u,dev_uhat,dev_vbar,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{}",
                r.round, r.dev_s, r.dev_u, r.dev_uhat, r.dev_vbar, r.pass
            );
        }
        out
    }
}

/// Lockstep comparison of FedADMM under `config` against FedDR under
/// [`dr_config_for`]`(config)` for `config.rounds` rounds.
pub fn lockstep_verify(problem: &CompositeProblem, config: &RunConfig) -> Result<EquivalenceReport> {
    lockstep_verify_pair(problem, config, &dr_config_for(config), false)
}

/// Lockstep comparison with separately supplied configurations.
///
/// The DR configuration must be the image of the ADMM one. A different master
/// seed is rejected unless `allow_seed_mismatch` is set, which is only useful
/// as a negative control.
pub fn lockstep_verify_pair(
    problem: &CompositeProblem,
    admm: &RunConfig,
    dr: &RunConfig,
    allow_seed_mismatch: bool,
) -> Result<EquivalenceReport> {
    admm.validate(problem.n_clients(), problem.dimension())?;
    dr.validate(problem.n_clients(), problem.dimension())?;
    let expected = dr_config_for(admm);
    let mismatch = |what: &str| Err(Error::Config(format!("lockstep configurations differ in {what}")));
    if (dr.eta - expected.eta).abs() > 1e-15 * expected.eta {
        return mismatch("step (FedDR needs 1/eta)");
    }
    if dr.alpha != 1.0 {
        return mismatch("relaxation (FedDR needs alpha = 1)");
    }
    if dr.rounds != admm.rounds {
        return mismatch("rounds");
    }
    if dr.sampling != admm.sampling {
        return mismatch("sampling scheme");
    }
    if dr.local_solver != admm.local_solver {
        return mismatch("local solver");
    }
    if dr.eps_schedule != admm.eps_schedule {
        return mismatch("tolerance schedule");
    }
    if dr.x0 != admm.x0 {
        return mismatch("initial point");
    }
    if dr.master_seed != admm.master_seed && !allow_seed_mismatch {
        return mismatch("master seed");
    }

    let eta = admm.eta;
    let mut a = FedAdmmState::init(problem, admm);
    let mut d = dr_state_from_admm(&a, eta)?;
    let exact = admm.local_solver.is_exact();
    let threshold = |row: usize| {
        if exact {
            1e-10
        } else {
            2.0 * admm.eps_schedule.tolerance(row).unwrap_or(0.0) + 1e-8
        }
    };

    let mut rows = Vec::with_capacity(admm.rounds + 1);
    rows.push(compare(0, &a, &d, eta, threshold(0))?);
    for k in 0..admm.rounds {
        let (ra, rd) = rayon::join(
            || fedadmm_round(&mut a, problem, admm, k),
            || feddr_round(&mut d, problem, dr, k),
        );
        ra?;
        rd?;
        rows.push(compare(k + 1, &a, &d, eta, threshold(k + 1))?);
    }
    Ok(EquivalenceReport { rows })
}

fn compare(round: usize, a: &FedAdmmState, d: &FedDrState, eta: f64, threshold: f64) -> Result<EquivalenceRow> {
    let mut dev_s: f64 = 0.0;
    let mut dev_u: f64 = 0.0;
    let mut dev_uhat: f64 = 0.0;
    for (ca, cd) in a.clients.iter().zip(&d.clients) {
        let img = map_admm_to_dr(&ca.x, &ca.z, &a.xbar, eta)?;
        dev_s = dev_s.max(img.s.max_abs_diff(&cd.y));
        dev_u = dev_u.max(img.u.max_abs_diff(&cd.x));
        dev_uhat = dev_uhat.max(img.uhat.max_abs_diff(&cd.xhat));
    }
    let dev_vbar = a.xbar.max_abs_diff(&d.xbar);
    let worst = dev_s.max(dev_u).max(dev_uhat).max(dev_vbar);
    Ok(EquivalenceRow {
        round,
        dev_s,
        dev_u,
        dev_uhat,
        dev_vbar,
        threshold,
        pass: worst <= threshold,
    })
}
