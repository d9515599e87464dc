//! Stationarity measures and the nonconvex rate bound for FedADMM.
//!
//! With `η̂ = 1/η`, `p̂` the smallest inclusion probability and free
//! parameters `γ₁, γ₂, γ₄ > 0` (`γ₄ < 1/4`), a penalty
//!
//! ```text
//! η > 4L(1 + 2γ₄) / (√(9 - 16γ₄(1 + 4γ₄)) - 1)
//! ```
//!
//! gives, for `g ≡ 0`,
//!
//! ```text
//! (1/(K+1)) Σₖ E‖∇f(x̄ᵏ)‖² ≤ C₁[F(x⁰) - F*]/(K+1)
//!                          + (1/(n(K+1))) Σₖ Σᵢ (C₂ ε²ᵢ,ₖ + C₃ ε²ᵢ,ₖ₊₁).
//! ```

use std::fmt::Write as _;

use crate::config::EpsSchedule;
use crate::error::{Error, Result};
use crate::problem::{full_gradient_f, CompositeProblem};
use crate::trace::RunTrace;
use crate::vector::ModelVector;

/// `‖∇f(x)‖²` when `g ≡ 0`, otherwise the squared forward-backward mapping
/// `‖(x - prox_{step·g}(x - step ∇f(x))) / step‖²`.
pub fn grad_mapping_norm_sq(problem: &CompositeProblem, x: &ModelVector, step: f64) -> Result<f64> {
    x.check_dim(problem.dimension())?;
    let grad = full_gradient_f(problem, x)?;
    let reg = problem.regularizer();
    if reg.is_zero() {
        return Ok(grad.norm_sq());
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Parameter(format!("gradient mapping step must be positive, got {step}")));
    }
    let forward = x.lincomb(1.0, &grad, -step);
    let backward = reg.prox(&forward, step);
    Ok((x - &backward).norm_sq() / (step * step))
}

/// Exclusive lower bound on the FedADMM penalty.
pub fn validate_stepsize(lipschitz: f64, gamma4: f64) -> Result<f64> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Domain(format!("L must be positive, got {lipschitz}")));
    }
    if !(gamma4 > 0.0 && gamma4 < 0.25) {
        return Err(Error::Domain(format!(
            "gamma4 = {gamma4} is outside (0, 1/4): square root nonpositive"
        )));
    }
    let root = (9.0 - 16.0 * gamma4 * (1.0 + 4.0 * gamma4)).sqrt();
    Ok(4.0 * lipschitz * (1.0 + 2.0 * gamma4) / (root - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateParameters {
    pub lipschitz: f64,
    pub eta: f64,
    pub p_hat: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Carried for completeness; no constant depends on it.
    pub gamma3: f64,
    pub gamma4: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateConstants {
    pub eta_hat: f64,
    pub beta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

pub fn compute_constants(params: &RateParameters) -> Result<RateConstants> {
    let RateParameters {
        lipschitz: l,
        eta,
        p_hat,
        gamma1: g1,
        gamma2: g2,
        gamma4: g4,
        ..
    } = *params;
    let bound = validate_stepsize(l, g4)?;
    if !(eta > bound) {
        return Err(Error::Parameter(format!("eta = {eta} must exceed {bound}")));
    }
    if !(g1 > 0.0 && g2 > 0.0 && params.gamma3 > 0.0) {
        return Err(Error::Parameter("gamma1, gamma2 and gamma3 must be positive".into()));
    }
    if !(p_hat > 0.0 && p_hat <= 1.0) {
        return Err(Error::Parameter(format!("p_hat must lie in (0, 1], got {p_hat}")));
    }

    let h = 1.0 / eta;
    let lh = l * h;
    let bracket = 2.0 - (lh + 1.0) - 2.0 * lh * lh - 4.0 * g4 * (1.0 + lh * lh);
    let beta = p_hat * bracket / (2.0 * h * (1.0 + g1) * (1.0 + lh * lh));
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!(
            "beta = {beta} is not positive (bracket {bracket}, p_hat {p_hat}, eta_hat {h})"
        )));
    }
    let rho2 = 2.0 * (1.0 + lh).powi(2) / (g4 * h)
        + (1.0 + lh * lh) / h
        + bracket / (2.0 * h * (1.0 + lh * lh) * g1);
    let rho1 = rho2 + (1.0 + lh * lh) / h;
    let c1 = 2.0 * (1.0 + lh).powi(2) * (1.0 + g2) / (h * h * beta);
    let c2 = rho1 * c1;
    let c3 = rho2 * c1 + (1.0 + lh).powi(2) * (1.0 + g2) / (h * h * g2);
    Ok(RateConstants {
        eta_hat: h,
        beta,
        rho1,
        rho2,
        c1,
        c2,
        c3,
    })
}

/// `⌊(C₁·gap + (C₂ + C₃)·D) / ε²⌋`.
pub fn iterations_for_accuracy(c: &RateConstants, gap: f64, d: f64, eps: f64) -> Result<u64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if !(gap >= 0.0 && d >= 0.0) {
        return Err(Error::Domain("gap and D must be nonnegative".into()));
    }
    Ok(((c.c1 * gap + (c.c2 + c.c3) * d) / (eps * eps)).floor() as u64)
}

/// Right-hand side of the rate bound after `k_max` rounds, with every client
/// solving to the schedule's `εₖ`.
pub fn rate_rhs(c: &RateConstants, gap: f64, schedule: &EpsSchedule, k_max: usize) -> f64 {
    let eps_sq = |k: usize| schedule.tolerance(k).map_or(0.0, |e| e * e);
    let inexact: f64 = (0..=k_max).map(|k| c.c2 * eps_sq(k) + c.c3 * eps_sq(k + 1)).sum();
    (c.c1 * gap + inexact) / (k_max + 1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub k: usize,
    pub lhs_avg: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub replications: usize,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,lhs_avg,rhs,ratio,pass\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{}", r.k, r.lhs_avg, r.rhs, r.ratio, r.pass);
        }
        out
    }

    /// Running averages `(K, lhs_avg)` for `K ≥ 1`.
    pub fn series(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.k >= 1).map(|r| (r.k, r.lhs_avg)).collect()
    }
}

/// Compares the seed-averaged running mean of `‖∇f(x̄ᵏ)‖²` with the bound at
/// every `K`. `traces` are replications of one `g ≡ 0` run that differ only
/// in their sampling seeds. A single replication estimates the expectation
/// poorly at small `K`, so its failures are informative only.
pub fn check_rate_bound(
    problem: &CompositeProblem,
    traces: &[RunTrace],
    constants: &RateConstants,
    schedule: &EpsSchedule,
) -> Result<RateReport> {
    if !problem.regularizer().is_zero() {
        return Err(Error::Config("the rate bound covers g = 0 only".into()));
    }
    let f_star = problem
        .optimal_value_hint()
        .ok_or_else(|| Error::Config("the rate bound needs F*; the problem has no optimal value hint".into()))?;
    let first = traces
        .first()
        .ok_or_else(|| Error::Config("no runs to check".into()))?;
    let rounds = first.rounds();
    if traces.iter().any(|t| t.rounds() != rounds) {
        return Err(Error::Config("replications differ in length".into()));
    }
    let f0 = first.rows[0].metrics.objective;
    let gap = (f0 - f_star).max(0.0);

    let mut running = vec![0.0; traces.len()];
    let mut rows = Vec::with_capacity(rounds + 1);
    for k in 0..=rounds {
        for (acc, t) in running.iter_mut().zip(traces) {
            *acc += t.rows[k].metrics.grad_mapping_sq;
        }
        let lhs_avg = running.iter().sum::<f64>() / (traces.len() * (k + 1)) as f64;
        let rhs = rate_rhs(constants, gap, schedule, k);
        rows.push(RateRow {
            k,
            lhs_avg,
            rhs,
            ratio: lhs_avg / rhs,
            pass: lhs_avg <= rhs,
        });
    }
    Ok(RateReport {
        rows,
        replications: traces.len(),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Regularizer;
    use crate::problems::{make_quadratic_instance, QuadraticClient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn params(eta: f64, gamma4: f64) -> RateParameters {
        RateParameters {
            lipschitz: 1.0,
            eta,
            p_hat: 1.0 / 3.0,
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 1.0,
            gamma4,
        }
    }

    #[test]
    fn stepsize_bound_examples() {
        assert!((validate_stepsize(1.0, 0.1).unwrap() - 3.0).abs() < 1e-12);
        assert!((validate_stepsize(1.0, 1e-9).unwrap() - 2.0).abs() < 1e-6);
        let err = validate_stepsize(1.0, 0.3).unwrap_err();
        assert!(err.to_string().contains("square root nonpositive"));
        assert!(validate_stepsize(1.0, 0.0).is_err());
    }

    #[test]
    fn beta_positive_on_grid() {
        for i in 1..=10 {
            let g4 = 0.25 * i as f64 / 11.0;
            let bound = validate_stepsize(1.0, g4).unwrap();
            for j in 0..10 {
                let eta = bound * (1.01 + (10.0 - 1.01) * j as f64 / 9.0);
                let c = compute_constants(&params(eta, g4)).unwrap();
                assert!(c.beta > 0.0, "g4 {g4} eta {eta}");
                for v in [c.rho1, c.rho2, c.c1, c.c2, c.c3] {
                    assert!(v.is_finite() && v > 0.0);
                }
                let h = c.eta_hat;
                assert!((c.rho1 - c.rho2 - (1.0 + h * h) / h).abs() <= 1e-12 * c.rho1);
                assert!((c.c2 / c.c1 - c.rho1).abs() <= 1e-12 * c.rho1);
            }
        }
    }

    #[test]
    fn constants_reject_small_eta() {
        assert!(compute_constants(&params(2.9, 0.1)).is_err());
        assert!(compute_constants(&RateParameters { p_hat: 0.0, ..params(4.0, 0.1) }).is_err());
    }

    #[test]
    fn iteration_count_examples() {
        let c = RateConstants {
            eta_hat: 1.0,
            beta: 1.0,
            rho1: 1.0,
            rho2: 1.0,
            c1: 10.0,
            c2: 3.0,
            c3: 4.0,
        };
        assert_eq!(iterations_for_accuracy(&c, 1.0, 0.0, 1.0).unwrap(), 10);
        assert_eq!(iterations_for_accuracy(&c, 0.0, 0.0, 0.5).unwrap(), 0);
        assert!(iterations_for_accuracy(&c, 1.0, 0.0, 0.0).is_err());
        let mut prev = u64::MAX;
        for i in 1..50 {
            let eps = 0.05 * i as f64;
            let k = iterations_for_accuracy(&c, 1.3, 0.2, eps).unwrap();
            let half = iterations_for_accuracy(&c, 1.3, 0.2, eps / 2.0).unwrap();
            assert!(k <= prev);
            assert!((4 * k..=4 * k + 3).contains(&half));
            prev = k;
        }
    }

    #[test]
    fn rhs_nonincreasing_without_inexactness() {
        let c = compute_constants(&params(4.0, 0.1)).unwrap();
        let s = EpsSchedule::Harmonic { eps0: 0.0 };
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let r = rate_rhs(&c, 2.0, &s, k);
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn gradient_mapping_reduces_to_gradient() {
        let inst = make_quadratic_instance(3, 4, 1, (0.5, 2.0)).unwrap();
        assert!(grad_mapping_norm_sq(&inst.problem, &inst.minimizer, 1.0).unwrap() < 1e-20);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // a box this wide never binds
        let tiny = inst.problem.clone().with_regularizer(Regularizer::Box { lo: -1e9, hi: 1e9 }).unwrap();
        for _ in 0..50 {
            let x = ModelVector::from((0..4).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>());
            let a = grad_mapping_norm_sq(&inst.problem, &x, 0.7).unwrap();
            let b = grad_mapping_norm_sq(&tiny, &x, 0.7).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a), "{a} {b}");
        }
    }

    #[test]
    fn l1_stationary_at_zero() {
        let f = QuadraticClient::centered(1.0, ModelVector::from(vec![0.0]));
        let p = CompositeProblem::new(vec![Arc::new(f)], Regularizer::L1 { lambda: 0.5 }, 1.0).unwrap();
        assert_eq!(grad_mapping_norm_sq(&p, &ModelVector::from(vec![0.0]), 1.0).unwrap(), 0.0);
        assert!(grad_mapping_norm_sq(&p, &ModelVector::from(vec![2.0]), 1.0).unwrap() > 0.0);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..50).map(|k| (k as f64, 3.0 / k as f64)).collect();
        assert!((loglog_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }
}
