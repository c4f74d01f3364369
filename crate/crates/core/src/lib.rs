//! Gradient-based saliency maps for small fully connected classifiers,
//! together with the SGD training loops, closed-form stability and fidelity
//! bounds, and empirical metrics used to study them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod saliency;
pub mod training;

pub use error::{Error, Result};
