use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{ClientLoss, CompositeProblem, Curvature, Regularizer};
use crate::seeds::{purpose, substream};
use crate::vector::ModelVector;

/// `f(x) = ½ xᵀAx - bᵀx + c` with symmetric positive semidefinite `A`.
#[derive(Clone, Debug)]
pub struct QuadraticClient {
    a: DMatrix<f64>,
    b: DVector<f64>,
    offset: f64,
    eig_min: f64,
    eig_max: f64,
}

impl QuadraticClient {
    pub fn new(a: DMatrix<f64>, b: ModelVector, offset: f64) -> Result<Self> {
        let d = b.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: a.nrows(),
            });
        }
        let asym = (&a - a.transpose()).abs().max();
        if asym > 1e-12 * a.abs().max().max(1.0) {
            return Err(Error::Parameter("quadratic matrix is not symmetric".into()));
        }
        let eig = a.clone().symmetric_eigenvalues();
        let eig_min = eig.min();
        let eig_max = eig.max();
        if eig_min < -1e-12 * eig_max.abs().max(1.0) {
            return Err(Error::Parameter(format!(
                "quadratic matrix is not positive semidefinite (min eigenvalue {eig_min})"
            )));
        }
        Ok(QuadraticClient {
            a,
            b: DVector::from_column_slice(b.as_slice()),
            offset,
            eig_min: eig_min.max(0.0),
            eig_max: eig_max.max(0.0),
        })
    }

    /// `½ s ‖x - center‖²`
    pub fn centered(scale: f64, center: ModelVector) -> Self {
        let d = center.len();
        let offset = 0.5 * scale * center.norm_sq();
        let b = center.scaled(scale);
        QuadraticClient {
            a: DMatrix::identity(d, d) * scale,
            b: DVector::from_column_slice(b.as_slice()),
            offset,
            eig_min: scale.max(0.0),
            eig_max: scale.max(0.0),
        }
    }

    pub fn zero(d: usize) -> Self {
        QuadraticClient::centered(0.0, ModelVector::zeros(d))
    }

    /// Random `A = Q diag(λ) Qᵀ` with `λ ~ U[lo, hi]`, Haar-like `Q` from a QR
    /// factorization of a Gaussian matrix, and `b ~ N(0, I)`.
    pub fn random_spd<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let lambdas = DVector::from_fn(d, |_, _| if hi > lo { rng.random_range(lo..hi) } else { lo });
        let a = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let b = ModelVector::from((0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
        QuadraticClient::new(a, b, 0.0).expect("constructed symmetric PSD")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear_term(&self) -> ModelVector {
        ModelVector::from(self.b.as_slice())
    }

    /// Largest eigenvalue of `A`, the gradient Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.eig_max
    }

    fn with_ridge(&self, ridge: f64) -> Self {
        let d = self.b.len();
        QuadraticClient {
            a: &self.a + DMatrix::identity(d, d) * ridge,
            b: self.b.clone(),
            offset: self.offset,
            eig_min: self.eig_min + ridge,
            eig_max: self.eig_max + ridge,
        }
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Solves `m y = rhs` for symmetric positive definite `m`.
fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if is_diagonal(&m) {
        let y = DVector::from_fn(rhs.len(), |j, _| rhs[j] / m[(j, j)]);
        return y.iter().all(|v| v.is_finite()).then_some(y);
    }
    Some(m.cholesky()?.solve(rhs))
}

fn to_dvec(x: &ModelVector) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

impl ClientLoss for QuadraticClient {
    fn dimension(&self) -> usize {
        self.b.len()
    }

    fn evaluate(&self, x: &ModelVector) -> f64 {
        let x = to_dvec(x);
        0.5 * x.dot(&(&self.a * &x)) - self.b.dot(&x) + self.offset
    }

    fn gradient(&self, x: &ModelVector) -> ModelVector {
        let g = &self.a * to_dvec(x) - &self.b;
        ModelVector::from(g.as_slice())
    }

    fn exact_prox(&self, v: &ModelVector, eta: f64) -> Option<ModelVector> {
        // (A + I/η) y = b + v/η
        let d = self.b.len();
        if is_diagonal(&self.a) {
            // elementwise, so consensus fixed points reproduce exactly
            let y: Vec<f64> = (0..d)
                .map(|j| (eta * self.b[j] + v[j]) / (eta * self.a[(j, j)] + 1.0))
                .collect();
            return Some(ModelVector::from(y));
        }
        let inv = 1.0 / eta;
        let m = &self.a + DMatrix::identity(d, d) * inv;
        let rhs = &self.b + to_dvec(v) * inv;
        let y = solve_spd(m, &rhs)?;
        Some(ModelVector::from(y.as_slice()))
    }

    fn curvature(&self) -> Curvature {
        Curvature::Convex {
            strong: self.eig_min,
        }
    }
}

/// A quadratic problem together with its closed-form solution.
#[derive(Clone, Debug)]
pub struct QuadraticInstance {
    pub problem: CompositeProblem,
    pub clients: Vec<QuadraticClient>,
    /// `x* = (Σ Aᵢ)⁻¹ Σ bᵢ`
    pub minimizer: ModelVector,
    /// `F(x*)` for `g ≡ 0`
    pub optimal_value: f64,
}

impl QuadraticInstance {
    /// Builds the problem from explicit clients, solving for the minimizer of
    /// the smooth part. A singular `Σ Aᵢ` is regularized by adding `1e-8·I`
    /// to every client, retried with growing ridges.
    pub fn from_clients(mut clients: Vec<QuadraticClient>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::Config("a problem needs at least one client".into()))?;
        let d = first.dimension();
        let mut ridge = 1e-8;
        let minimizer = loop {
            let mut sum_a = DMatrix::zeros(d, d);
            let mut sum_b = DVector::zeros(d);
            for c in &clients {
                sum_a += &c.a;
                sum_b += &c.b;
            }
            let singular = sum_a.clone().symmetric_eigenvalues().min() <= 1e-12 * clients.len() as f64;
            match (!singular).then(|| solve_spd(sum_a, &sum_b)).flatten() {
                Some(y) => break ModelVector::from(y.as_slice()),
                None if ridge < 1.0 => {
                    clients = clients.iter().map(|c| c.with_ridge(ridge)).collect();
                    ridge *= 10.0;
                }
                None => return Err(Error::Domain("aggregate quadratic is singular".into())),
            }
        };
        let lipschitz = clients
            .iter()
            .map(QuadraticClient::lipschitz)
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let losses: Vec<Arc<dyn ClientLoss>> = clients
            .iter()
            .cloned()
            .map(|c| Arc::new(c) as Arc<dyn ClientLoss>)
            .collect();
        let problem = CompositeProblem::new(losses, Regularizer::Zero, lipschitz)?;
        let optimal_value = problem.smooth_value(&minimizer)?;
        Ok(QuadraticInstance {
            problem: problem.with_optimal_value(optimal_value),
            clients,
            minimizer,
            optimal_value,
        })
    }
}

/// `n` random quadratic clients in dimension `d` whose Hessian eigenvalues lie
/// in `eig_range`.
pub fn make_quadratic_instance(
    n: usize,
    d: usize,
    seed: u64,
    eig_range: (f64, f64),
) -> Result<QuadraticInstance> {
    if n == 0 || d == 0 {
        return Err(Error::Config("quadratic instance needs n >= 1 and d >= 1".into()));
    }
    let (lo, hi) = eig_range;
    if !(lo >= 0.0 && hi >= lo && hi > 0.0 && hi.is_finite()) {
        return Err(Error::Config(format!(
            "eigenvalue range must satisfy 0 <= lo <= hi, hi > 0 (got [{lo}, {hi}])"
        )));
    }
    let clients = (0..n)
        .map(|i| {
            let mut rng = substream(seed, purpose::SYNTHETIC, 0, Some(i as u64));
            QuadraticClient::random_spd(d, lo, hi, &mut rng)
        })
        .collect();
    QuadraticInstance::from_clients(clients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::full_gradient_f;

    #[test]
    fn two_client_scalar_instance() {
        let clients = vec![
            QuadraticClient::centered(1.0, ModelVector::from(vec![0.0])),
            QuadraticClient::centered(1.0, ModelVector::from(vec![2.0])),
        ];
        let inst = QuadraticInstance::from_clients(clients).unwrap();
        assert_eq!(inst.minimizer.as_slice(), &[1.0]);
        assert_eq!(inst.optimal_value, 0.5);
        assert_eq!(inst.problem.optimal_value_hint(), Some(0.5));
    }

    #[test]
    fn single_quadratic() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let c = QuadraticClient::new(a, ModelVector::from(vec![4.0]), 0.0).unwrap();
        let inst = QuadraticInstance::from_clients(vec![c]).unwrap();
        assert!((inst.minimizer[0] - 2.0).abs() < 1e-15);
        assert_eq!(inst.problem.lipschitz(), 2.0);
    }

    #[test]
    fn random_instance_minimizer_is_stationary() {
        let inst = make_quadratic_instance(30, 10, 5, (0.5, 2.0)).unwrap();
        let g = full_gradient_f(&inst.problem, &inst.minimizer).unwrap();
        assert!(g.norm() <= 1e-10, "{}", g.norm());
        assert!(inst.problem.lipschitz() <= 2.0);
    }

    #[test]
    fn singular_aggregate_gets_a_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let c = QuadraticClient::new(a, ModelVector::from(vec![1.0, 1.0]), 0.0).unwrap();
        let inst = QuadraticInstance::from_clients(vec![c]).unwrap();
        assert!(inst.minimizer.is_finite());
        let g = full_gradient_f(&inst.problem, &inst.minimizer).unwrap();
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadraticClient::new(a, ModelVector::zeros(2), 0.0).is_err());
    }
}
