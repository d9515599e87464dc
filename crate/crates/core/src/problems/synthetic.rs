//! Heterogeneous synthetic classification data, `synthetic-(α, β)`.
//!
//! For client `i`:
//!
//! * `uᵢ ~ N(0, α)`, and the client's softmax model `Wᵢ, bᵢ` has entries
//!   `~ N(uᵢ, 1)`; `α` spreads the local models apart.
//! * `Bᵢ ~ N(0, β)`, and the input mean `vᵢ` has entries `~ N(Bᵢ, 1)`; `β`
//!   spreads the local input distributions apart.
//! * inputs `x ~ N(vᵢ, Σ)` with `Σ = diag(j^{-1.2})`, labels
//!   `y = argmax(Wᵢ x + bᵢ)`.
//! * shard sizes `⌊LogNormal(4, 1)⌉` clipped to `[10, 1000]`.
//!
//! Every client draws from its own substream of the dataset seed.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::error::{Error, Result};
use crate::problems::classification::argmax;
use crate::seeds::{purpose, substream};
use crate::vector::ModelVector;

/// Row-major samples of one client.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub input_dim: usize,
    pub classes: usize,
    /// `len() × input_dim` features, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub alpha: f64,
    pub beta: f64,
    pub n_clients: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub min_samples: usize,
    pub max_samples: usize,
}

impl SyntheticSpec {
    /// 30 clients, 60 features, 10 classes.
    pub fn new(alpha: f64, beta: f64, seed: u64) -> Self {
        SyntheticSpec {
            alpha,
            beta,
            n_clients: 30,
            input_dim: 60,
            classes: 10,
            seed,
            min_samples: 10,
            max_samples: 1000,
        }
    }

    /// `synthetic-0-0`, `synthetic-0.5-0.5`, `synthetic-1-1` (the parenthesized
    /// spelling `synthetic-(1,1)` is accepted too).
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let key: String = name.chars().filter(|c| !"() ".contains(*c)).collect();
        let (a, b) = match key.as_str() {
            "synthetic-0-0" | "synthetic-0,0" => (0.0, 0.0),
            "synthetic-0.5-0.5" | "synthetic-0.5,0.5" => (0.5, 0.5),
            "synthetic-1-1" | "synthetic-1,1" => (1.0, 1.0),
            _ => return None,
        };
        Some(SyntheticSpec::new(a, b, seed))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.n_clients == 0 || self.input_dim == 0 || self.classes < 2 {
            return Err(Error::Config(
                "need at least one client, one feature and two classes".into(),
            ));
        }
        if self.min_samples == 0 || self.min_samples > self.max_samples {
            return Err(Error::Config(format!(
                "invalid shard size range [{}, {}]",
                self.min_samples, self.max_samples
            )));
        }
        Ok(())
    }
}

/// Client shards plus, when freshly generated, each client's generating
/// softmax model.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset {
    pub spec: SyntheticSpec,
    pub shards: Vec<Arc<Shard>>,
    pub generating_models: Option<Vec<ModelVector>>,
}

impl FederatedDataset {
    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(|s| s.len()).sum()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FederatedDataset> {
    spec.validate()?;
    let p = spec.input_dim;
    let c = spec.classes;
    let sizes = LogNormal::new(4.0, 1.0).expect("valid lognormal");
    let cov_sd: Vec<f64> = (1..=p).map(|j| (j as f64).powf(-1.2).sqrt()).collect();

    let mut shards = Vec::with_capacity(spec.n_clients);
    let mut models = Vec::with_capacity(spec.n_clients);
    for i in 0..spec.n_clients {
        let mut rng = substream(spec.seed, purpose::SYNTHETIC, 0, Some(i as u64));
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let model_mean = spec.alpha.sqrt() * normal();
        let input_shift = spec.beta.sqrt() * normal();
        // row c: weights then bias, the SoftmaxLinear layout
        let model: Vec<f64> = (0..c * (p + 1)).map(|_| model_mean + normal()).collect();
        let input_mean: Vec<f64> = (0..p).map(|_| input_shift + normal()).collect();

        let raw: f64 = sizes.sample(&mut rng);
        let m = (raw.round() as usize).clamp(spec.min_samples, spec.max_samples);

        let mut features = Vec::with_capacity(m * p);
        let mut labels = Vec::with_capacity(m);
        let mut logits = vec![0.0; c];
        for _ in 0..m {
            let start = features.len();
            for j in 0..p {
                features.push(input_mean[j] + cov_sd[j] * rng.sample::<f64, _>(StandardNormal));
            }
            let x = &features[start..];
            for (k, z) in logits.iter_mut().enumerate() {
                let row = &model[k * (p + 1)..(k + 1) * (p + 1)];
                *z = row[..p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[p];
            }
            labels.push(argmax(&logits) as u32);
        }
        shards.push(Arc::new(Shard {
            input_dim: p,
            classes: c,
            features,
            labels,
        }));
        models.push(ModelVector::from(model));
    }
    Ok(FederatedDataset {
        spec: spec.clone(),
        shards,
        generating_models: Some(models),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_pairwise_distance(models: &[ModelVector]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                total += models[i].distance(&models[j]);
                pairs += 1;
            }
        }
        total / pairs as f64
    }

    fn model_means(data: &FederatedDataset) -> Vec<f64> {
        data.generating_models
            .as_ref()
            .unwrap()
            .iter()
            .map(|m| m.iter().sum::<f64>() / m.len() as f64)
            .collect()
    }

    #[test]
    fn zero_dispersion_shares_model_means() {
        let spec = SyntheticSpec {
            n_clients: 2,
            ..SyntheticSpec::new(0.0, 0.0, 4)
        };
        let data = generate_synthetic(&spec).unwrap();
        // the hierarchical mean uᵢ is exactly zero for both; the empirical
        // means only carry unit-variance noise over 610 entries
        for m in model_means(&data) {
            assert!(m.abs() < 4.0 / (610f64).sqrt());
        }
    }

    #[test]
    fn heterogeneity_grows_with_alpha_beta() {
        let mut low = 0.0;
        let mut high = 0.0;
        for seed in 0..20 {
            let d0 = generate_synthetic(&SyntheticSpec { n_clients: 10, ..SyntheticSpec::new(0.0, 0.0, seed) }).unwrap();
            let d1 = generate_synthetic(&SyntheticSpec { n_clients: 10, ..SyntheticSpec::new(1.0, 1.0, seed) }).unwrap();
            low += mean_pairwise_distance(d0.generating_models.as_ref().unwrap());
            high += mean_pairwise_distance(d1.generating_models.as_ref().unwrap());
        }
        assert!(high > low, "{high} <= {low}");
    }

    #[test]
    fn deterministic_and_unbalanced() {
        let spec = SyntheticSpec::new(0.5, 0.5, 7);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let sizes: Vec<usize> = a.shards.iter().map(|s| s.len()).collect();
        assert!(sizes.iter().all(|&m| (10..=1000).contains(&m)));
        assert!(sizes.iter().max() > sizes.iter().min());
        assert!(a.shards.iter().all(|s| s.labels.iter().all(|&l| l < 10)));
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!(SyntheticSpec::preset("synthetic-0.5-0.5", 1).unwrap().alpha, 0.5);
        assert_eq!(SyntheticSpec::preset("synthetic-(1,1)", 1).unwrap().beta, 1.0);
        assert!(SyntheticSpec::preset("synthetic-2-2", 1).is_none());
        assert!(generate_synthetic(&SyntheticSpec::new(-1.0, 0.0, 1)).is_err());
    }
}
