//! Client sampling schemes.
//!
//! A scheme is *proper* when every client is selected with positive
//! probability. Draws are a pure function of `(scheme, round, master_seed)`
//! and use their own substream, so data shuffling and local solvers never
//! shift the participation pattern.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds::{purpose, substream};

#[derive(Clone, Debug, PartialEq)]
pub enum SamplingScheme {
    /// Every client participates in every round.
    Full { n: usize },
    /// Exactly `s` distinct clients, uniformly over all size-`s` subsets.
    Uniform { n: usize, s: usize },
    /// Client `i` joins independently with probability `probs[i]`.
    Bernoulli { probs: Vec<f64> },
}

impl SamplingScheme {
    pub fn full(n: usize) -> Self {
        SamplingScheme::Full { n }
    }

    pub fn uniform(n: usize, s: usize) -> Result<Self> {
        if s == 0 || s > n {
            return Err(Error::Config(format!(
                "uniform sampling needs 1 <= S <= n, got S={s}, n={n}"
            )));
        }
        Ok(SamplingScheme::Uniform { n, s })
    }

    pub fn bernoulli(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("bernoulli sampling needs at least one client".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("selection probability {p} outside [0, 1]")));
        }
        Ok(SamplingScheme::Bernoulli { probs })
    }

    pub fn n(&self) -> usize {
        match self {
            SamplingScheme::Full { n } | SamplingScheme::Uniform { n, .. } => *n,
            SamplingScheme::Bernoulli { probs } => probs.len(),
        }
    }

    pub fn is_full(&self) -> bool {
        match self {
            SamplingScheme::Full { .. } => true,
            SamplingScheme::Uniform { n, s } => s == n,
            SamplingScheme::Bernoulli { probs } => probs.iter().all(|&p| p == 1.0),
        }
    }

    /// Marginal inclusion probabilities `pᵢ = P(i ∈ Ŝ)`.
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            SamplingScheme::Full { n } => vec![1.0; *n],
            SamplingScheme::Uniform { n, s } => vec![*s as f64 / *n as f64; *n],
            SamplingScheme::Bernoulli { probs } => probs.clone(),
        }
    }

    /// `p̂ = min pᵢ`.
    pub fn p_hat(&self) -> f64 {
        self.probabilities()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Fails with the first (0-based) client whose selection probability is zero.
    pub fn validate_proper(&self) -> Result<()> {
        match self.probabilities().iter().position(|&p| !(p > 0.0)) {
            Some(client) => Err(Error::ImproperSampling { client }),
            None if self.n() == 0 => Err(Error::Config("sampling over zero clients".into())),
            None => Ok(()),
        }
    }

    /// Active clients of round `k`, sorted ascending.
    pub fn draw(&self, round: usize, master_seed: u64) -> Vec<usize> {
        match self {
            SamplingScheme::Full { n } => (0..*n).collect(),
            SamplingScheme::Uniform { n, s } if s == n => (0..*n).collect(),
            SamplingScheme::Uniform { n, s } => {
                let mut rng = substream(master_seed, purpose::SAMPLING, round as u64, None);
                let mut picked = index::sample(&mut rng, *n, *s).into_vec();
                picked.sort_unstable();
                picked
            }
            SamplingScheme::Bernoulli { probs } => {
                let mut rng = substream(master_seed, purpose::SAMPLING, round as u64, None);
                probs
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &p)| {
                        // one uniform per client keeps the stream aligned across clients
                        let u: f64 = rng.random();
                        (u < p).then_some(i)
                    })
                    .collect()
            }
        }
    }
}
