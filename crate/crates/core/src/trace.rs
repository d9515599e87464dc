//! Per-round records of a run.
//!
//! Row 0 holds the state right after initialization and row `k ≥ 1` the state
//! after round `k - 1`, so a run of `K` rounds has `K + 1` rows.

use crate::vector::{pairwise_mean, ModelVector};

/// Which triple a [`ClientSnapshot`] stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IterateFamily {
    /// `(yᵢ, xᵢ, x̂ᵢ)` of FedDR and the DRS forms.
    DouglasRachford,
    /// `(xᵢ, zᵢ, x̂ᵢ)` of FedADMM and FedPD.
    Admm,
    /// `(xᵢ, wᵢ, x̂ᵢ)` of the change-of-variables form and FedDR-II.
    ChangeOfVariables,
}

impl IterateFamily {
    pub fn labels(self) -> [&'static str; 3] {
        match self {
            IterateFamily::DouglasRachford => ["y", "x", "xhat"],
            IterateFamily::Admm => ["x", "z", "xhat"],
            IterateFamily::ChangeOfVariables => ["x", "w", "xhat"],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientSnapshot {
    pub first: ModelVector,
    pub second: ModelVector,
    pub reflected: ModelVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Verbosity {
    /// Server iterates and metrics only.
    #[default]
    Summary,
    /// Also every client's triple at every round.
    FullIterates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    /// `F(x̄ᵏ)`
    pub objective: f64,
    /// Squared gradient mapping at `x̄ᵏ` (squared gradient norm when `g ≡ 0`).
    pub grad_mapping_sq: f64,
    pub accuracy: Option<f64>,
    /// Wall-clock milliseconds since the start of the run.
    pub cum_wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub xbar: ModelVector,
    pub xtilde: ModelVector,
    /// Clients active in the round that produced this row; empty for row 0.
    pub sampled: Vec<usize>,
    pub clients: Option<Vec<ClientSnapshot>>,
    pub metrics: RoundMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub algorithm: String,
    pub family: IterateFamily,
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn rounds(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn xbars(&self) -> impl Iterator<Item = &ModelVector> {
        self.rows.iter().map(|r| &r.xbar)
    }

    /// Largest `‖x̃ᵏ - (1/n) Σᵢ x̂ᵢᵏ‖∞` over rows with client snapshots.
    pub fn aggregation_gap(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for row in &self.rows {
            if let Some(clients) = &row.clients {
                let mean = pairwise_mean(clients.iter().map(|c| &c.reflected), row.xtilde.len());
                let gap = mean.max_abs_diff(&row.xtilde);
                worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
            }
        }
        worst
    }

    pub fn grad_mapping_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.metrics.grad_mapping_sq).collect()
    }
}
