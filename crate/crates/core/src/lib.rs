//! Federated gradient estimation with compressed communication, for
//! optimization (MARINA) and sampling (Langevin-MARINA).
//!
//! Layout, bottom-up:
//!
//! * [`targets`]: objectives `F = Σ_i F_i` split across devices, gradient
//!   oracles and the target law `π ∝ exp(−F)`.
//! * [`compression`]: unbiased compressors with their variance and
//!   communication-cost constants.
//! * [`estimators`]: the MARINA gradient-estimator family (vanilla,
//!   finite-sum, online) and its recursion constants.
//! * [`dynamics`]: the optimization and sampling loops over many chains, plus
//!   step-size caps and theoretical bound evaluators.
//! * [`metrics`]: KL, W2, TV and Fisher estimators and closed forms.
//! * [`harness`]: TOML-configured experiments writing CSV traces.
//!
//! Randomness is addressed by `(seed, purpose, chain, iteration, device)`
//! through [`rng::Streams`], so runs are reproducible regardless of thread
//! scheduling.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compression;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod targets;

pub use error::{Error, Result};
pub use targets::Point;
