//! Counterfactual EV charging simulation and censorship-aware demand
//! forecasting.
//!
//! The crate has two halves. The simulation half ([`ingest`], [`fleet`],
//! [`queue`], [`graph`]) replays vehicle trips as an electric fleet under
//! capacity-limited charging queues and aggregates the result into a
//! [`panel::DemandPanel`] in which both the observed (clipped) and the true
//! latent demand are known. The learning half ([`tensor`], [`model`],
//! [`losses`], [`training`], [`eval`]) fits Tobit and censored quantile
//! regression heads on a temporal graph convolutional network and scores
//! them against the latent demand.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tape ops return `Result`, so they cannot be the `std::ops` traits.
#![allow(clippy::should_implement_trait)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod fleet;
pub mod graph;
pub mod ingest;
pub mod losses;
pub mod model;
pub mod panel;
pub mod queue;
mod rng;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
