// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse activation-clamping rules that explain a language model's
//! next-token prediction.
//!
//! The pipeline: perturb a prompt into a neighborhood ([`perturb`]), attribute
//! each neighbor's output to hidden neurons ([`attribution`]), turn the
//! attributions into candidate clamps ([`predicate`]), then greedily build and
//! prune a rule that keeps the prediction fixed on most neighbors
//! ([`search`]). [`eval`] holds baselines, instability and experiment drivers.

pub mod attribution;
pub mod error;
pub mod eval;
pub mod model;
pub mod perturb;
pub mod predicate;
pub mod rng;
pub mod search;

pub use error::{Result, WasdError};
