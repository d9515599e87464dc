//! The composite objective `F(x) = (1/n) Σ fᵢ(x) + g(x)`.

use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vector::{pairwise_mean, ModelVector};

/// Curvature class of a client loss, used to certify inexact proximal solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Curvature {
    /// `f - (μ/2)‖x‖²` is convex. `μ = 0` is plain convexity.
    Convex { strong: f64 },
    /// Only the problem-level Lipschitz constant is known.
    Nonconvex,
}

impl Curvature {
    /// Lower bound on the smallest Hessian eigenvalue given the gradient
    /// Lipschitz constant `lipschitz`.
    pub fn lower_bound(self, lipschitz: f64) -> f64 {
        match self {
            Curvature::Convex { strong } => strong,
            Curvature::Nonconvex => -lipschitz,
        }
    }

    pub fn is_convex(self) -> bool {
        matches!(self, Curvature::Convex { .. })
    }
}

/// One client's smooth loss `fᵢ`.
pub trait ClientLoss: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;

    fn evaluate(&self, x: &ModelVector) -> f64;

    fn gradient(&self, x: &ModelVector) -> ModelVector;

    /// `argmin_y f(y) + ‖v - y‖² / (2 eta)` when a closed form exists.
    fn exact_prox(&self, _v: &ModelVector, _eta: f64) -> Option<ModelVector> {
        None
    }

    /// Mini-batch gradient estimate. `None` means the loss has no sample
    /// structure and callers fall back to [`ClientLoss::gradient`].
    fn stochastic_gradient(
        &self,
        _x: &ModelVector,
        _rng: &mut ChaCha8Rng,
        _batch: usize,
    ) -> Option<ModelVector> {
        None
    }

    fn curvature(&self) -> Curvature {
        Curvature::Nonconvex
    }

    /// `(correct, total)` argmax predictions on the local training data, for
    /// classification losses.
    fn accuracy_counts(&self, _x: &ModelVector) -> Option<(usize, usize)> {
        None
    }
}

/// Proper closed convex regularizer `g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `λ‖x‖₁`
    L1 { lambda: f64 },
    /// Indicator of the box `[lo, hi]ᵈ`.
    Box { lo: f64, hi: f64 },
    /// Indicator of the Euclidean ball of the given radius around the origin.
    Ball { radius: f64 },
}

const FEASIBILITY_SLACK: f64 = 1e-12;

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1 { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            Regularizer::L1 { lambda } => Err(Error::Parameter(format!(
                "l1 weight must be positive, got {lambda}"
            ))),
            Regularizer::Box { lo, hi } if lo <= hi && !lo.is_nan() && !hi.is_nan() => Ok(()),
            Regularizer::Box { lo, hi } => {
                Err(Error::Parameter(format!("empty box [{lo}, {hi}]")))
            }
            Regularizer::Ball { radius } if radius > 0.0 && radius.is_finite() => Ok(()),
            Regularizer::Ball { radius } => Err(Error::Parameter(format!(
                "ball radius must be positive, got {radius}"
            ))),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Regularizer::Zero)
    }

    /// `g(x)`; `+∞` outside the domain of an indicator.
    pub fn evaluate(&self, x: &ModelVector) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::Box { lo, hi } => {
                let slack = FEASIBILITY_SLACK * lo.abs().max(hi.abs()).max(1.0);
                if x.iter().all(|&v| v >= lo - slack && v <= hi + slack) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::Ball { radius } => {
                if x.norm() <= radius * (1.0 + FEASIBILITY_SLACK) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `prox_{step·g}(v)`.
    pub fn prox(&self, v: &ModelVector, step: f64) -> ModelVector {
        match *self {
            Regularizer::Zero => v.clone(),
            Regularizer::L1 { lambda } => {
                let t = lambda * step;
                v.map(|x| x.signum() * (x.abs() - t).max(0.0))
            }
            Regularizer::Box { lo, hi } => v.map(|x| x.clamp(lo, hi)),
            Regularizer::Ball { radius } => {
                let norm = v.norm();
                if norm <= radius {
                    v.clone()
                } else {
                    v.scaled(radius / norm)
                }
            }
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Regularizer::Zero => write!(f, "zero"),
            Regularizer::L1 { lambda } => write!(f, "l1:{lambda}"),
            Regularizer::Box { lo, hi } => write!(f, "box:{lo},{hi}"),
            Regularizer::Ball { radius } => write!(f, "ball:{radius}"),
        }
    }
}

/// `n` client losses, a regularizer and the shared gradient Lipschitz
/// constant `L`.
#[derive(Clone, Debug)]
pub struct CompositeProblem {
    clients: Vec<Arc<dyn ClientLoss>>,
    regularizer: Regularizer,
    lipschitz: f64,
    dimension: usize,
    optimal_value_hint: Option<f64>,
}

impl CompositeProblem {
    pub fn new(
        clients: Vec<Arc<dyn ClientLoss>>,
        regularizer: Regularizer,
        lipschitz: f64,
    ) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::Config("a problem needs at least one client".into()))?;
        let dimension = first.dimension();
        if dimension == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        for c in &clients {
            if c.dimension() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: c.dimension(),
                });
            }
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Parameter(format!(
                "Lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        regularizer.validate()?;
        Ok(CompositeProblem {
            clients,
            regularizer,
            lipschitz,
            dimension,
            optimal_value_hint: None,
        })
    }

    pub fn with_optimal_value(mut self, value: f64) -> Self {
        self.optimal_value_hint = Some(value);
        self
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Result<Self> {
        regularizer.validate()?;
        self.regularizer = regularizer;
        // the hint was for the old objective
        self.optimal_value_hint = None;
        Ok(self)
    }

    pub fn clients(&self) -> &[Arc<dyn ClientLoss>] {
        &self.clients
    }

    pub fn client(&self, i: usize) -> &dyn ClientLoss {
        self.clients[i].as_ref()
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn optimal_value_hint(&self) -> Option<f64> {
        self.optimal_value_hint
    }

    /// `(1/n) Σ fᵢ(x)` summed in client order.
    pub fn smooth_value(&self, x: &ModelVector) -> Result<f64> {
        x.check_dim(self.dimension)?;
        let values: Vec<f64> = self.clients.iter().map(|c| c.evaluate(x)).collect();
        Ok(pairwise_scalar_sum(&values) / self.n_clients() as f64)
    }

    /// Pooled argmax accuracy over every client's data, if the losses are
    /// classifiers.
    pub fn accuracy(&self, x: &ModelVector) -> Option<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for c in &self.clients {
            let (k, t) = c.accuracy_counts(x)?;
            correct += k;
            total += t;
        }
        (total > 0).then(|| correct as f64 / total as f64)
    }
}

fn pairwise_scalar_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_scalar_sum(&v[..n / 2]) + pairwise_scalar_sum(&v[n / 2..]),
    }
}

/// `F(x) = (1/n) Σ fᵢ(x) + g(x)`. Infeasible points of an indicator give `+∞`.
pub fn evaluate_objective(problem: &CompositeProblem, x: &ModelVector) -> Result<f64> {
    let smooth = problem.smooth_value(x)?;
    Ok(smooth + problem.regularizer().evaluate(x))
}

/// `∇f(x) = (1/n) Σ ∇fᵢ(x)`, reduced pairwise in ascending client order.
pub fn full_gradient_f(problem: &CompositeProblem, x: &ModelVector) -> Result<ModelVector> {
    x.check_dim(problem.dimension())?;
    let grads = problem
        .clients()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let g = c.gradient(x);
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::NonFinite {
                    context: "client gradient",
                    round: None,
                    client: Some(i),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_mean(&grads, problem.dimension()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticClient;

    fn centered(a: f64) -> Arc<dyn ClientLoss> {
        Arc::new(QuadraticClient::centered(1.0, ModelVector::from(vec![a])))
    }

    fn two_client() -> CompositeProblem {
        CompositeProblem::new(vec![centered(0.0), centered(2.0)], Regularizer::Zero, 1.0).unwrap()
    }

    #[test]
    fn objective_examples() {
        let single = CompositeProblem::new(
            vec![Arc::new(QuadraticClient::centered(1.0, ModelVector::zeros(3)))],
            Regularizer::Zero,
            1.0,
        )
        .unwrap();
        assert_eq!(evaluate_objective(&single, &ModelVector::zeros(3)).unwrap(), 0.0);

        // direct summation: (1/2)(½(1-0)² + ½(1-2)²)
        let p = two_client();
        let x = ModelVector::from(vec![1.0]);
        let oracle = 0.5 * (0.5 * 1.0f64.powi(2) + 0.5 * (1.0f64 - 2.0).powi(2));
        assert_eq!(evaluate_objective(&p, &x).unwrap(), oracle);
        assert_eq!(oracle, 0.5);

        let boxed = p
            .with_regularizer(Regularizer::Box { lo: -1.0, hi: 1.0 })
            .unwrap();
        assert_eq!(
            evaluate_objective(&boxed, &ModelVector::from(vec![2.0])).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn objective_rejects_wrong_dimension() {
        let p = two_client();
        assert!(matches!(
            evaluate_objective(&p, &ModelVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn central_difference(p: &CompositeProblem, x: &ModelVector, h: f64) -> ModelVector {
        let mut g = ModelVector::zeros(x.len());
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            g[j] = (evaluate_objective(p, &xp).unwrap() - evaluate_objective(p, &xm).unwrap())
                / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_examples_against_finite_differences() {
        let p = two_client();
        let x = ModelVector::from(vec![0.0]);
        let g = full_gradient_f(&p, &x).unwrap();
        let fd = central_difference(&p, &x, 1e-5);
        assert!((g[0] - fd[0]).abs() < 1e-8);
        assert_eq!(g[0], -1.0);

        // stationarity at the minimizer of the smooth part
        assert_eq!(full_gradient_f(&p, &ModelVector::from(vec![1.0])).unwrap()[0], 0.0);

        let single = CompositeProblem::new(
            vec![Arc::new(QuadraticClient::centered(1.0, ModelVector::zeros(2)))],
            Regularizer::Zero,
            1.0,
        )
        .unwrap();
        let x = ModelVector::from(vec![3.0, 4.0]);
        let g = full_gradient_f(&single, &x).unwrap();
        let fd = central_difference(&single, &x, 1e-5);
        assert!(g.max_abs_diff(&fd) < 1e-8);
        assert_eq!(g.as_slice(), &[3.0, 4.0]);
    }

    #[derive(Debug)]
    struct Exploding;
    impl ClientLoss for Exploding {
        fn dimension(&self) -> usize {
            1
        }
        fn evaluate(&self, _x: &ModelVector) -> f64 {
            0.0
        }
        fn gradient(&self, _x: &ModelVector) -> ModelVector {
            ModelVector::from(vec![f64::NAN])
        }
    }

    #[test]
    fn non_finite_gradient_names_client() {
        let p = CompositeProblem::new(vec![centered(0.0), Arc::new(Exploding)], Regularizer::Zero, 1.0)
            .unwrap();
        match full_gradient_f(&p, &ModelVector::zeros(1)) {
            Err(Error::NonFinite { client: Some(1), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn construction_invariants() {
        assert!(CompositeProblem::new(vec![], Regularizer::Zero, 1.0).is_err());
        assert!(CompositeProblem::new(vec![centered(0.0)], Regularizer::Zero, 0.0).is_err());
        let two_d: Arc<dyn ClientLoss> =
            Arc::new(QuadraticClient::centered(1.0, ModelVector::zeros(2)));
        assert!(matches!(
            CompositeProblem::new(vec![centered(0.0), two_d], Regularizer::Zero, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(CompositeProblem::new(
            vec![centered(0.0)],
            Regularizer::L1 { lambda: -1.0 },
            1.0
        )
        .is_err());
    }

    #[test]
    fn regularizer_proxes() {
        let v = ModelVector::from(vec![3.0, -0.5, 1.0]);
        let st = Regularizer::L1 { lambda: 1.0 }.prox(&v, 1.0);
        assert_eq!(st.as_slice(), &[2.0, 0.0, 0.0]);
        let bx = Regularizer::Box { lo: -0.5, hi: 0.5 }.prox(&v, 7.0);
        assert_eq!(bx.as_slice(), &[0.5, -0.5, 0.5]);
        let ball = Regularizer::Ball { radius: 1.0 }.prox(&ModelVector::from(vec![3.0, 4.0]), 1.0);
        assert!((ball.norm() - 1.0).abs() < 1e-15);
        assert_eq!(Regularizer::Ball { radius: 1.0 }.evaluate(&ball), 0.0);
        assert_eq!(Regularizer::Zero.prox(&v, 3.0), v);
    }
}
