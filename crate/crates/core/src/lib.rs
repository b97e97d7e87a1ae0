//! Desk-scale laboratory for unified RL + on-policy distillation post-training.
//!
//! The crate trains tiny autoregressive categorical policies on rule-verifiable
//! toy sequence tasks with a single objective family that spans:
//!
//! - group-relative policy gradients (grouped rollouts, standardized advantages,
//!   token-level normalization),
//! - on-policy knowledge distillation via the reverse KL to a frozen teacher,
//!   estimated per sampled token (`k1`, `k2`, `k3`) or over the full vocabulary
//!   against a top-K-renormalized teacher,
//! - the joint objective that subtracts a `beta`-weighted KL penalty from the
//!   group-relative objective, with constant or linearly annealed `beta`,
//! - reward-guided masking that suppresses the distillation term on responses
//!   (or whole groups) that already earn positive reward.
//!
//! Everything is small enough to check against brute force: the [`oracle`]
//! module enumerates the full sequence space of a policy and computes exact
//! divergences and gradients, which the test suites use to pin down estimator
//! bias and unbiasedness claims numerically.

pub mod config;
pub mod error;
pub mod estimators;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod schedule;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
