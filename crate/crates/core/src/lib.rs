//! Federated composite optimization.
//!
//! Minimizes `F(x) = (1/n) Σᵢ fᵢ(x) + g(x)` over clients that each hold one
//! smooth loss `fᵢ`, with a proper closed convex regularizer `g` applied at
//! the server. The crate implements
//!
//! * parallel Douglas–Rachford splitting and its reordered and
//!   change-of-variables forms,
//! * FedDR (randomized, inexact DR with partial participation) and the
//!   intermediate FedDR-II,
//! * FedADMM (augmented-Lagrangian local solves plus dual updates) and FedPD
//!   as its full-participation, `g ≡ 0` special case,
//!
//! together with the iterate map that makes FedADMM with penalty `η` and
//! FedDR with step `1/η` produce the same server models, a lockstep harness
//! that checks it on live runs, and the constants of the `O(1/K)` rate bound.
//!
//! The guide in `book/` walks through each piece with runnable snippets.

pub mod algorithms;
pub mod analysis;
pub mod config;
pub mod equivalence;
pub mod error;
pub mod problem;
pub mod problems;
pub mod prox;
pub mod sampling;
pub mod seeds;
pub mod trace;
pub mod vector;

pub use algorithms::{run, Algorithm};
pub use config::{DrInit, EpsSchedule, LocalSolver, RunConfig};
pub use error::{Error, Result};
pub use problem::{evaluate_objective, full_gradient_f, ClientLoss, CompositeProblem, Curvature, Regularizer};
pub use sampling::SamplingScheme;
pub use trace::{RunTrace, TraceRow, Verbosity};
pub use vector::ModelVector;

// Compile and run the guide's code listings as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/composite-problems.md")]
    mod composite_problems {}
    #[doc = include_str!("../../../book/src/proximal-operators.md")]
    mod proximal_operators {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/douglas-rachford.md")]
    mod douglas_rachford {}
    #[doc = include_str!("../../../book/src/fedadmm.md")]
    mod fedadmm {}
    #[doc = include_str!("../../../book/src/equivalence.md")]
    mod equivalence {}
    #[doc = include_str!("../../../book/src/convergence.md")]
    mod convergence {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
}
