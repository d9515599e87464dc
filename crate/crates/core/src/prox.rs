//! Proximal steps on client losses.
//!
//! `prox_{η f}(v) = argmin_y f(y) + ‖v - y‖² / (2η)`. Clients either evaluate
//! it in closed form or approximate it with a fixed budget of (stochastic)
//! gradient steps on the subproblem
//! `φ(y) = f(y) + ‖v - y‖² / (2η)`.
//!
//! When an accuracy `ε` is requested, the result is certified before it is
//! returned: against the closed form when the loss has one, otherwise through
//! strong convexity of `φ`, which gives `‖y - prox‖ ≤ ‖∇φ(y)‖ / μ_φ` with
//! `μ_φ = 1/η + (lower curvature bound of f)`. For a nonconvex `L`-smooth
//! loss that bound is `1/η - L`, so certification needs `η < 1/L`.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::LocalSolver;
use crate::error::{Error, Result};
use crate::problem::ClientLoss;
use crate::vector::ModelVector;

/// One proximal subproblem handed to a client.
#[derive(Clone, Copy, Debug)]
pub struct ProxRequest<'a> {
    pub center: &'a ModelVector,
    pub step: f64,
    /// Required accuracy; `None` runs the budget without certification.
    pub tolerance: Option<f64>,
    pub solver: LocalSolver,
    /// Problem-level gradient Lipschitz constant.
    pub lipschitz: f64,
    /// Starting point of iterative solvers; defaults to the center.
    pub warm_start: Option<&'a ModelVector>,
    /// Seed of the mini-batch stream.
    pub rng_seed: [u8; 32],
}

impl<'a> ProxRequest<'a> {
    pub fn exact(center: &'a ModelVector, step: f64) -> Self {
        ProxRequest {
            center,
            step,
            tolerance: Some(0.0),
            solver: LocalSolver::ExactProx,
            lipschitz: 1.0,
            warm_start: None,
            rng_seed: [0; 32],
        }
    }
}

/// Result of a local solve. `certified_distance` bounds `‖point - prox‖` when
/// a certificate was computed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxOutcome {
    pub point: ModelVector,
    pub certified_distance: Option<f64>,
}

/// Closed-form `prox_{η f}(v)`.
pub fn prox_exact(loss: &dyn ClientLoss, v: &ModelVector, eta: f64) -> Result<ModelVector> {
    v.check_dim(loss.dimension())?;
    check_step(eta)?;
    let y = loss.exact_prox(v, eta).ok_or(Error::NoClosedForm)?;
    y.ensure_finite("closed-form prox")?;
    Ok(y)
}

fn check_step(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("prox step must be positive, got {eta}")))
    }
}

/// `∇φ(y) = ∇f(y) + (y - v)/η`.
pub fn subproblem_gradient(loss: &dyn ClientLoss, y: &ModelVector, v: &ModelVector, eta: f64) -> ModelVector {
    let mut g = loss.gradient(y);
    let inv = 1.0 / eta;
    for ((gi, yi), vi) in g.as_mut_slice().iter_mut().zip(y.iter()).zip(v.iter()) {
        *gi += (yi - vi) * inv;
    }
    g
}

/// Approximate `prox_{η f}(v)` within the requested tolerance.
pub fn prox_inexact(loss: &dyn ClientLoss, req: &ProxRequest<'_>) -> Result<ProxOutcome> {
    req.center.check_dim(loss.dimension())?;
    check_step(req.step)?;
    if let Some(eps) = req.tolerance {
        if !(eps >= 0.0) {
            return Err(Error::Parameter(format!("tolerance must be nonnegative, got {eps}")));
        }
    }
    req.solver.validate()?;

    let (iters, lr, batch) = match req.solver {
        LocalSolver::ExactProx => {
            let point = prox_exact(loss, req.center, req.step)?;
            return Ok(ProxOutcome {
                point,
                certified_distance: Some(0.0),
            });
        }
        LocalSolver::GradientDescent { iters, lr } => (iters, lr, None),
        LocalSolver::StochasticGd { iters, lr, batch } => (iters, lr, Some(batch)),
    };

    let modulus = 1.0 / req.step + loss.curvature().lower_bound(req.lipschitz);
    if req.tolerance.is_some() && modulus <= 0.0 && loss.exact_prox(req.center, req.step).is_none() {
        return Err(Error::Parameter(format!(
            "prox step {} is not below 1/L = {} for a nonconvex loss",
            req.step,
            1.0 / req.lipschitz
        )));
    }

    let mut y = req.warm_start.unwrap_or(req.center).clone();
    y.check_dim(loss.dimension())?;
    let inv_step = 1.0 / req.step;
    let mut rng = ChaCha8Rng::from_seed(req.rng_seed);
    for _ in 0..iters {
        let mut g = match batch {
            Some(b) => loss
                .stochastic_gradient(&y, &mut rng, b)
                .unwrap_or_else(|| loss.gradient(&y)),
            None => loss.gradient(&y),
        };
        for ((gi, yi), vi) in g.as_mut_slice().iter_mut().zip(y.iter()).zip(req.center.iter()) {
            *gi += (yi - vi) * inv_step;
        }
        y.axpy(-lr, &g);
    }
    y.ensure_finite("local solver iterate")?;

    let Some(eps) = req.tolerance else {
        return Ok(ProxOutcome {
            point: y,
            certified_distance: None,
        });
    };
    let achieved = match loss.exact_prox(req.center, req.step) {
        Some(exact) => y.distance(&exact),
        None => subproblem_gradient(loss, &y, req.center, req.step).norm() / modulus,
    };
    if achieved <= eps {
        Ok(ProxOutcome {
            point: y,
            certified_distance: Some(achieved),
        })
    } else {
        Err(Error::ToleranceNotMet {
            tolerance: eps,
            achieved,
        })
    }
}

/// `argmin_x f(x) + ⟨z, x - x̄⟩ + (η/2)‖x - x̄‖²`.
///
/// Completing the square turns this into `prox_{f/η}(x̄ - z/η)`, and the
/// solve is delegated to [`prox_inexact`] with that center and step.
pub fn argmin_augmented_lagrangian(
    loss: &dyn ClientLoss,
    xbar: &ModelVector,
    z: &ModelVector,
    eta: f64,
    req: &ProxRequest<'_>,
) -> Result<ProxOutcome> {
    check_step(eta)?;
    xbar.check_dim(loss.dimension())?;
    z.check_dim(loss.dimension())?;
    let center = admm_center(xbar, z, eta);
    let delegated = ProxRequest {
        center: &center,
        step: 1.0 / eta,
        ..*req
    };
    prox_inexact(loss, &delegated)
}

/// `x̄ - z/η`, the proximal center of the augmented-Lagrangian step.
pub fn admm_center(xbar: &ModelVector, z: &ModelVector, eta: f64) -> ModelVector {
    xbar.lincomb(1.0, z, -1.0 / eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticClient;
    use proptest::prelude::*;

    fn quad_1d(a: f64, center: f64) -> QuadraticClient {
        QuadraticClient::centered(a, ModelVector::from(vec![center]))
    }

    /// Minimizer of a scalar function on a uniform grid.
    fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).ceil() as usize;
        (0..=n)
            .map(|i| lo + i as f64 * step)
            .min_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap()
    }

    fn v1(x: f64) -> ModelVector {
        ModelVector::from(vec![x])
    }

    #[test]
    fn exact_examples_match_grid_oracle() {
        let f = quad_1d(1.0, 3.0);
        let oracle = grid_argmin(|y| 0.5 * (y - 3.0).powi(2) + 0.5 * (1.0 - y).powi(2), -5.0, 5.0, 1e-4);
        let got = prox_exact(&f, &v1(1.0), 1.0).unwrap()[0];
        assert!((got - oracle).abs() <= 1e-4);
        assert!((got - 2.0).abs() < 1e-15);

        let f = quad_1d(1.0, 0.0);
        let oracle = grid_argmin(|y| 0.5 * y * y + (3.0 - y).powi(2), -5.0, 5.0, 1e-4);
        let got = prox_exact(&f, &v1(3.0), 0.5).unwrap()[0];
        assert!((got - oracle).abs() <= 1e-4);
        assert!((got - 2.0).abs() < 1e-15);

        let zero = QuadraticClient::zero(3);
        let v = ModelVector::from(vec![1.0, -2.0, 0.5]);
        assert_eq!(prox_exact(&zero, &v, 0.7).unwrap(), v);
    }

    #[derive(Debug)]
    struct NoProx;
    impl ClientLoss for NoProx {
        fn dimension(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &ModelVector) -> f64 {
            x[0].cosh()
        }
        fn gradient(&self, x: &ModelVector) -> ModelVector {
            v1(x[0].sinh())
        }
        fn curvature(&self) -> crate::problem::Curvature {
            crate::problem::Curvature::Convex { strong: 1.0 }
        }
    }

    #[test]
    fn missing_closed_form_is_a_capability_error() {
        assert!(matches!(prox_exact(&NoProx, &v1(0.0), 1.0), Err(Error::NoClosedForm)));
    }

    #[test]
    fn inexact_exact_solver_equals_closed_form() {
        let f = quad_1d(2.0, 1.0);
        let v = v1(-0.3);
        let out = prox_inexact(&f, &ProxRequest::exact(&v, 0.8)).unwrap();
        assert_eq!(out.point, prox_exact(&f, &v, 0.8).unwrap());
    }

    #[test]
    fn gradient_descent_reaches_closed_form() {
        // f(y) = (y - 1)², contraction factor (1 - 0.01·3) per step
        let f = quad_1d(2.0, 1.0);
        let v = v1(4.0);
        let req = ProxRequest {
            center: &v,
            step: 1.0,
            tolerance: None,
            solver: LocalSolver::GradientDescent { iters: 300, lr: 0.01 },
            lipschitz: 2.0,
            warm_start: None,
            rng_seed: [0; 32],
        };
        let out = prox_inexact(&f, &req).unwrap();
        let exact = prox_exact(&f, &v, 1.0).unwrap();
        assert!(out.point.distance(&exact) < 1e-3);
        assert!(out.certified_distance.is_none());
    }

    #[test]
    fn one_step_within_loose_tolerance() {
        let f = quad_1d(1.0, 3.0);
        let v = v1(1.0);
        let req = ProxRequest {
            center: &v,
            step: 1.0,
            tolerance: Some(0.1),
            solver: LocalSolver::GradientDescent { iters: 1, lr: 0.5 },
            lipschitz: 1.0,
            warm_start: None,
            rng_seed: [0; 32],
        };
        let out = prox_inexact(&f, &req).unwrap();
        let oracle = grid_argmin(|y| 0.5 * (y - 3.0).powi(2) + 0.5 * (1.0 - y).powi(2), -5.0, 5.0, 1e-4);
        assert!((out.point[0] - oracle).abs() <= 0.1);
        assert!(out.certified_distance.unwrap() <= 0.1);
    }

    #[test]
    fn tolerance_failure_reports_residual() {
        let f = quad_1d(1.0, 3.0);
        let v = v1(1.0);
        let req = ProxRequest {
            center: &v,
            step: 1.0,
            tolerance: Some(1e-9),
            solver: LocalSolver::GradientDescent { iters: 2, lr: 0.1 },
            lipschitz: 1.0,
            warm_start: None,
            rng_seed: [0; 32],
        };
        match prox_inexact(&f, &req) {
            Err(Error::ToleranceNotMet { achieved, .. }) => assert!(achieved > 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn certificate_without_closed_form() {
        // cosh is 1-strongly convex; with η = 1 the subproblem modulus is 2
        let v = v1(0.7);
        let req = ProxRequest {
            center: &v,
            step: 1.0,
            tolerance: Some(1e-8),
            solver: LocalSolver::GradientDescent { iters: 200, lr: 0.3 },
            lipschitz: 3.0,
            warm_start: None,
            rng_seed: [0; 32],
        };
        let out = prox_inexact(&NoProx, &req).unwrap();
        // exact solution by bisection on φ'(y) = sinh y + y - 0.7
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid.sinh() + mid - 0.7 > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!((out.point[0] - lo).abs() <= out.certified_distance.unwrap() + 1e-15);
    }

    #[test]
    fn augmented_lagrangian_examples() {
        let xbar = v1(0.0);
        let f = quad_1d(1.0, 2.0);
        let got = argmin_augmented_lagrangian(&f, &xbar, &v1(0.0), 1.0, &ProxRequest::exact(&xbar, 1.0))
            .unwrap()
            .point[0];
        let oracle = grid_argmin(|x| 0.5 * (x - 2.0).powi(2) + 0.5 * x * x, -5.0, 5.0, 1e-4);
        assert!((got - oracle).abs() <= 1e-4);
        assert!((got - 1.0).abs() < 1e-15);

        let f = quad_1d(1.0, 0.0);
        let got = argmin_augmented_lagrangian(&f, &xbar, &v1(1.0), 1.0, &ProxRequest::exact(&xbar, 1.0))
            .unwrap()
            .point[0];
        let oracle = grid_argmin(|x| 0.5 * x * x + x + 0.5 * x * x, -5.0, 5.0, 1e-4);
        assert!((got - oracle).abs() <= 1e-4);
        assert!((got + 0.5).abs() < 1e-15);
    }

    #[test]
    fn delegation_identity_on_random_quadratics() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let d = 3;
            let f = QuadraticClient::random_spd(d, 0.1, 4.0, &mut rng);
            let xbar = ModelVector::from((0..d).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let z = ModelVector::from((0..d).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let eta = rng.random_range(0.05..10.0);
            let got = argmin_augmented_lagrangian(&f, &xbar, &z, eta, &ProxRequest::exact(&xbar, 1.0))
                .unwrap()
                .point;
            let want = prox_exact(&f, &admm_center(&xbar, &z, eta), 1.0 / eta).unwrap();
            assert!(got.max_abs_diff(&want) <= 1e-10);
        }
    }

    proptest! {
        #[test]
        fn exact_prox_is_a_local_minimum(
            a in 0.1f64..5.0, c in -3.0f64..3.0, v in -3.0f64..3.0, eta in 0.05f64..5.0,
            delta in 1e-4f64..1e-2, sign in prop::bool::ANY,
        ) {
            let f = quad_1d(a, c);
            let y = prox_exact(&f, &v1(v), eta).unwrap()[0];
            let phi = |t: f64| 0.5 * a * (t - c).powi(2) + (v - t).powi(2) / (2.0 * eta);
            let e = if sign { 1.0 } else { -1.0 };
            prop_assert!(phi(y) <= phi(y + delta * e));
        }

        #[test]
        fn inexact_success_respects_epsilon(
            a in 0.1f64..3.0, c in -3.0f64..3.0, v in -3.0f64..3.0,
            eps in 1e-3f64..1.0, iters in 1usize..60,
        ) {
            let f = quad_1d(a, c);
            let center = v1(v);
            let req = ProxRequest {
                center: &center,
                step: 1.0,
                tolerance: Some(eps),
                solver: LocalSolver::GradientDescent { iters, lr: 0.2 },
                lipschitz: a,
                warm_start: None,
                rng_seed: [0; 32],
            };
            if let Ok(out) = prox_inexact(&f, &req) {
                let exact = prox_exact(&f, &center, 1.0).unwrap();
                prop_assert!(out.point.distance(&exact) <= eps);
            }
        }
    }
}
