//! Amortized causal structure learning.
//!
//! Synthetic task simulators (linear and random-Fourier-feature SCMs, a
//! stochastic gene-regulatory model), an axial-attention edge predictor
//! trained by reverse-KL-style likelihood on simulated tasks, an optional
//! acyclicity constraint enforced by dual ascent, and structure metrics.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod graph;
pub mod grn;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracles;
pub mod rng;
pub mod scm;
pub mod simulate;
pub mod suite;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
