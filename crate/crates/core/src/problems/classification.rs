//! Cross-entropy classifiers over a client's data shard: a linear softmax
//! model (multinomial logistic regression) and a one-hidden-layer sigmoid
//! network.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{ClientLoss, CompositeProblem, Curvature, Regularizer};
use crate::problems::synthetic::{FederatedDataset, Shard};
use crate::seeds::{purpose, substream};
use crate::vector::ModelVector;

/// A differentiable classifier with parameters flattened into a vector.
pub trait Classifier: Send + Sync + std::fmt::Debug {
    fn n_params(&self) -> usize;

    /// Writes class scores for input `x` into `logits`.
    fn logits(&self, params: &[f64], x: &[f64], logits: &mut [f64]);

    /// Cross-entropy of one sample; adds its gradient into `grad`.
    fn sample_loss_grad(&self, params: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64;

    fn classes(&self) -> usize;

    fn is_convex(&self) -> bool;
}

/// Numerically stable `log Σ exp(z) - z[label]`, leaving softmax probabilities in `z`.
fn softmax_xent(z: &mut [f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let target = z[label];
    for v in z.iter_mut() {
        *v /= sum;
    }
    sum.ln() - target.ln()
}

/// Linear softmax model. Row `c` of the parameter layout is the class-`c`
/// weight vector followed by its bias.
#[derive(Clone, Debug)]
pub struct SoftmaxLinear {
    pub input_dim: usize,
    pub classes: usize,
}

impl Classifier for SoftmaxLinear {
    fn n_params(&self) -> usize {
        self.classes * (self.input_dim + 1)
    }

    fn logits(&self, params: &[f64], x: &[f64], logits: &mut [f64]) {
        let row = self.input_dim + 1;
        for (c, out) in logits.iter_mut().enumerate() {
            let w = &params[c * row..(c + 1) * row];
            *out = w[..self.input_dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[self.input_dim];
        }
    }

    fn sample_loss_grad(&self, params: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let mut z = vec![0.0; self.classes];
        self.logits(params, x, &mut z);
        let loss = softmax_xent(&mut z, label);
        let row = self.input_dim + 1;
        for (c, &p) in z.iter().enumerate() {
            let coef = p - if c == label { 1.0 } else { 0.0 };
            let g = &mut grad[c * row..(c + 1) * row];
            for (gj, xj) in g[..self.input_dim].iter_mut().zip(x) {
                *gj += coef * xj;
            }
            g[self.input_dim] += coef;
        }
        loss
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// `input × hidden × classes` network with a sigmoid hidden layer.
/// Parameter layout: `W1 (hidden × input)`, `b1`, `W2 (classes × hidden)`, `b2`.
#[derive(Clone, Debug)]
pub struct SigmoidMlp {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl SigmoidMlp {
    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input_dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn hidden_activations(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w1_end, _, _) = self.offsets();
        let w1 = &params[..w1_end];
        let b1 = &params[w1_end..w1_end + self.hidden];
        (0..self.hidden)
            .map(|h| {
                let row = &w1[h * self.input_dim..(h + 1) * self.input_dim];
                sigmoid(row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[h])
            })
            .collect()
    }

    fn output(&self, params: &[f64], act: &[f64], logits: &mut [f64]) {
        let (_, b1_end, w2_end) = self.offsets();
        let w2 = &params[b1_end..w2_end];
        let b2 = &params[w2_end..];
        for (c, out) in logits.iter_mut().enumerate() {
            let row = &w2[c * self.hidden..(c + 1) * self.hidden];
            *out = row.iter().zip(act).map(|(a, b)| a * b).sum::<f64>() + b2[c];
        }
    }

    /// Small random weights (`N(0, 0.1²)`), zero biases.
    pub fn init_params(&self, seed: u64) -> ModelVector {
        let mut rng = substream(seed, purpose::MODEL_INIT, 0, None);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut p = vec![0.0; self.n_params()];
        for (i, v) in p.iter_mut().enumerate() {
            let is_weight = i < w1_end || (b1_end..w2_end).contains(&i);
            if is_weight {
                *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        ModelVector::from(p)
    }
}

impl Classifier for SigmoidMlp {
    fn n_params(&self) -> usize {
        self.hidden * (self.input_dim + 1) + self.classes * (self.hidden + 1)
    }

    fn logits(&self, params: &[f64], x: &[f64], logits: &mut [f64]) {
        let act = self.hidden_activations(params, x);
        self.output(params, &act, logits);
    }

    fn sample_loss_grad(&self, params: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let act = self.hidden_activations(params, x);
        let mut z = vec![0.0; self.classes];
        self.output(params, &act, &mut z);
        let loss = softmax_xent(&mut z, label);
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &params[b1_end..w2_end];
        let mut back = vec![0.0; self.hidden];
        for (c, &p) in z.iter().enumerate() {
            let delta = p - if c == label { 1.0 } else { 0.0 };
            let row = c * self.hidden;
            for h in 0..self.hidden {
                grad[b1_end + row + h] += delta * act[h];
                back[h] += delta * w2[row + h];
            }
            grad[w2_end + c] += delta;
        }
        for h in 0..self.hidden {
            let delta = back[h] * act[h] * (1.0 - act[h]);
            let row = h * self.input_dim;
            for (j, xj) in x.iter().enumerate() {
                grad[row + j] += delta * xj;
            }
            grad[w1_end + h] += delta;
        }
        loss
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// Mean cross-entropy of a classifier on one shard plus `(ridge/2)‖θ‖²`.
#[derive(Clone, Debug)]
pub struct ClassificationLoss<M> {
    shard: Arc<Shard>,
    model: M,
    ridge: f64,
}

impl<M: Classifier> ClassificationLoss<M> {
    pub fn new(shard: Arc<Shard>, model: M, ridge: f64) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::Config("empty data shard".into()));
        }
        if let Some(&bad) = shard.labels.iter().find(|&&l| l as usize >= model.classes()) {
            return Err(Error::Config(format!(
                "label {bad} outside {} classes",
                model.classes()
            )));
        }
        if !(ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be nonnegative, got {ridge}")));
        }
        Ok(ClassificationLoss { shard, model, ridge })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    fn accumulate(&self, params: &[f64], samples: impl Iterator<Item = usize>, count: usize) -> (f64, ModelVector) {
        let mut grad = vec![0.0; self.model.n_params()];
        let mut loss = 0.0;
        for s in samples {
            loss += self
                .model
                .sample_loss_grad(params, self.shard.sample(s), self.shard.labels[s] as usize, &mut grad);
        }
        let scale = 1.0 / count as f64;
        for (g, p) in grad.iter_mut().zip(params) {
            *g = *g * scale + self.ridge * p;
        }
        (loss * scale, ModelVector::from(grad))
    }
}

impl<M: Classifier> ClientLoss for ClassificationLoss<M> {
    fn dimension(&self) -> usize {
        self.model.n_params()
    }

    fn evaluate(&self, x: &ModelVector) -> f64 {
        let mut z = vec![0.0; self.model.classes()];
        let mut total = 0.0;
        for s in 0..self.shard.len() {
            self.model.logits(x.as_slice(), self.shard.sample(s), &mut z);
            total += softmax_xent(&mut z, self.shard.labels[s] as usize);
        }
        total / self.shard.len() as f64 + 0.5 * self.ridge * x.norm_sq()
    }

    fn gradient(&self, x: &ModelVector) -> ModelVector {
        self.accumulate(x.as_slice(), 0..self.shard.len(), self.shard.len()).1
    }

    /// Mean gradient over `batch` samples drawn uniformly with replacement.
    fn stochastic_gradient(&self, x: &ModelVector, rng: &mut ChaCha8Rng, batch: usize) -> Option<ModelVector> {
        let m = self.shard.len();
        let picks: Vec<usize> = (0..batch).map(|_| rng.random_range(0..m)).collect();
        Some(self.accumulate(x.as_slice(), picks.into_iter(), batch).1)
    }

    fn curvature(&self) -> Curvature {
        if self.model.is_convex() {
            Curvature::Convex { strong: self.ridge }
        } else {
            Curvature::Nonconvex
        }
    }

    /// Argmax predictions, ties resolved toward the lowest class index.
    fn accuracy_counts(&self, x: &ModelVector) -> Option<(usize, usize)> {
        let mut z = vec![0.0; self.model.classes()];
        let correct = (0..self.shard.len())
            .filter(|&s| {
                self.model.logits(x.as_slice(), self.shard.sample(s), &mut z);
                argmax(&z) == self.shard.labels[s] as usize
            })
            .count();
        Some((correct, self.shard.len()))
    }
}

/// Index of the first maximal entry.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

pub type LogisticClient = ClassificationLoss<SoftmaxLinear>;
pub type MlpClient = ClassificationLoss<SigmoidMlp>;

/// `½ λ_max(X̃ᵀX̃ / m) + ridge` where `X̃` appends a constant 1 to each input.
///
/// The softmax cross-entropy Hessian per sample is `(diag(p) - ppᵀ) ⊗ x̃x̃ᵀ`,
/// and `λ_max(diag(p) - ppᵀ) ≤ ½`.
pub fn logistic_lipschitz(shard: &Shard, ridge: f64) -> f64 {
    let p = shard.input_dim + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut row = vec![1.0; p];
    for s in 0..shard.len() {
        row[..shard.input_dim].copy_from_slice(shard.sample(s));
        for i in 0..p {
            for j in 0..p {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    gram /= shard.len() as f64;
    0.5 * gram.symmetric_eigenvalues().max() + ridge
}

/// Softmax regression with one client per shard.
pub fn make_logistic_instance(data: &FederatedDataset, ridge: f64) -> Result<CompositeProblem> {
    let mut clients: Vec<Arc<dyn ClientLoss>> = Vec::with_capacity(data.shards.len());
    let mut lipschitz: f64 = 0.0;
    for (i, shard) in data.shards.iter().enumerate() {
        let model = SoftmaxLinear {
            input_dim: shard.input_dim,
            classes: shard.classes,
        };
        let loss = ClassificationLoss::new(shard.clone(), model, ridge)
            .map_err(|e| Error::Config(format!("client {i}: {e}")))?;
        lipschitz = lipschitz.max(logistic_lipschitz(shard, ridge));
        clients.push(Arc::new(loss));
    }
    CompositeProblem::new(clients, Regularizer::Zero, lipschitz)
}

/// One-hidden-layer network with one client per shard.
///
/// The network gradient has no global Lipschitz bound; the reported `L` is
/// twice the largest gradient-difference ratio observed over 64 random pairs
/// at the initialization scale, which is an estimate only.
pub fn make_mlp_instance(data: &FederatedDataset, hidden: usize, ridge: f64, seed: u64) -> Result<CompositeProblem> {
    let mut clients: Vec<Arc<dyn ClientLoss>> = Vec::with_capacity(data.shards.len());
    let mut typed = Vec::with_capacity(data.shards.len());
    for (i, shard) in data.shards.iter().enumerate() {
        let model = SigmoidMlp {
            input_dim: shard.input_dim,
            hidden,
            classes: shard.classes,
        };
        let loss = ClassificationLoss::new(shard.clone(), model, ridge)
            .map_err(|e| Error::Config(format!("client {i}: {e}")))?;
        typed.push(loss.clone());
        clients.push(Arc::new(loss));
    }
    let lipschitz = estimate_lipschitz(&typed, seed);
    CompositeProblem::new(clients, Regularizer::Zero, lipschitz)
}

fn estimate_lipschitz<M: Classifier>(clients: &[ClassificationLoss<M>], seed: u64) -> f64 {
    let mut rng = substream(seed, purpose::MODEL_INIT, 1, None);
    let mut worst: f64 = 0.0;
    for t in 0..64 {
        let c = &clients[t % clients.len()];
        let d = c.dimension();
        let x = ModelVector::from((0..d).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
        let y = ModelVector::from(
            x.iter()
                .map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<_>>(),
        );
        let ratio = c.gradient(&x).distance(&c.gradient(&y)) / x.distance(&y);
        worst = worst.max(ratio);
    }
    2.0 * worst.max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::synthetic::{generate_synthetic, SyntheticSpec};
    use rand::SeedableRng;

    fn small_data() -> FederatedDataset {
        generate_synthetic(&SyntheticSpec {
            n_clients: 3,
            input_dim: 5,
            classes: 3,
            ..SyntheticSpec::new(0.5, 0.5, 9)
        })
        .unwrap()
    }

    fn random_point(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> ModelVector {
        ModelVector::from((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
    }

    fn check_gradient<L: ClientLoss>(loss: &L, points: usize, tol: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..points {
            let x = random_point(loss.dimension(), 0.5, &mut rng);
            let g = loss.gradient(&x);
            let h = 1e-5;
            let mut fd = ModelVector::zeros(x.len());
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                fd[j] = (loss.evaluate(&xp) - loss.evaluate(&xm)) / (2.0 * h);
            }
            let rel = g.distance(&fd) / g.norm().max(1e-8);
            assert!(rel <= tol, "relative gradient error {rel}");
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let data = small_data();
        let p = make_logistic_instance(&data, 0.01).unwrap();
        for c in p.clients() {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let x = random_point(c.dimension(), 0.5, &mut rng);
                let g = c.gradient(&x);
                let mut fd = ModelVector::zeros(x.len());
                for j in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += 1e-5;
                    xm[j] -= 1e-5;
                    fd[j] = (c.evaluate(&xp) - c.evaluate(&xm)) / 2e-5;
                }
                assert!(g.distance(&fd) / g.norm() <= 1e-5);
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let data = small_data();
        let model = SigmoidMlp {
            input_dim: 5,
            hidden: 4,
            classes: 3,
        };
        let loss = ClassificationLoss::new(data.shards[0].clone(), model, 0.0).unwrap();
        check_gradient(&loss, 10, 1e-4, 5);
    }

    #[test]
    fn logistic_lipschitz_bound_holds_on_random_pairs() {
        let data = small_data();
        let p = make_logistic_instance(&data, 0.0).unwrap();
        let l = p.lipschitz();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for c in p.clients() {
            for _ in 0..300 {
                let x = random_point(c.dimension(), 2.0, &mut rng);
                let y = random_point(c.dimension(), 2.0, &mut rng);
                let lhs = c.gradient(&x).distance(&c.gradient(&y));
                assert!(lhs <= (l + 1e-8) * x.distance(&y));
            }
        }
    }

    #[test]
    fn saturated_logit_drives_loss_to_zero() {
        let shard = Arc::new(Shard {
            input_dim: 1,
            classes: 2,
            features: vec![1.0],
            labels: vec![1],
        });
        let loss = ClassificationLoss::new(shard, SoftmaxLinear { input_dim: 1, classes: 2 }, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 1.0, 5.0, 20.0, 200.0] {
            // class-1 weight t, everything else zero
            let v = loss.evaluate(&ModelVector::from(vec![0.0, 0.0, t, 0.0]));
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-80);
    }

    #[test]
    fn ridge_makes_prox_solvable_to_high_accuracy() {
        use crate::config::LocalSolver;
        use crate::prox::{prox_inexact, ProxRequest};
        let data = small_data();
        let p = make_logistic_instance(&data, 0.1).unwrap();
        let c = p.client(0);
        let v = ModelVector::zeros(c.dimension());
        let lr = 1.0 / (p.lipschitz() + 1.0);
        let req = ProxRequest {
            center: &v,
            step: 1.0,
            tolerance: Some(1e-10),
            solver: LocalSolver::GradientDescent { iters: 2000, lr },
            lipschitz: p.lipschitz(),
            warm_start: None,
            rng_seed: [0; 32],
        };
        let out = prox_inexact(c, &req).unwrap();
        assert!(out.certified_distance.unwrap() <= 1e-10);
    }

    #[test]
    fn empty_shard_rejected() {
        let shard = Arc::new(Shard {
            input_dim: 2,
            classes: 2,
            features: vec![],
            labels: vec![],
        });
        assert!(ClassificationLoss::new(shard, SoftmaxLinear { input_dim: 2, classes: 2 }, 0.0).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
