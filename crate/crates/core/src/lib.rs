//! Fair federated learning over a simulated fading multiple-access channel.
//!
//! The crate trains a shared model across heterogeneous clients while
//! aggregating gradients analogically over the air: clients scale their
//! normalized gradients so that the channel's additive superposition itself
//! computes the desired weighted sum, and the receiver applies a single
//! de-noising scalar. Fairness comes from a box-constrained Chebyshev
//! weighting that adapts each round to the clients' reported losses.
//!
//! Interchangeable strategies are registered by name and selected through
//! the experiment configuration:
//!
//! - aggregation algorithms: `ota-ffl`, `ota-fedavg`, `ota-term`, `ota-qffl`
//! - client schedulers: `full`, `channel-topk`, `gibbs`
//! - models: `quadratic`, `linear`, `logistic`, `mlp`

pub mod config;
pub mod datasets;
pub mod error;
pub mod fedsim;
pub mod metrics;
pub mod models;
pub mod moo;
pub mod ota;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
