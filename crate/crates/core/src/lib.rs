//! Likelihood-based out-of-distribution detection with similarity-scaled
//! entropy manipulation (SPEM) on top of a small affine-coupling flow.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`rng`] | counter-based ChaCha streams and inverse-CDF Gaussians |
//! | [`flow`] | affine-coupling flow: exact likelihood, inverse, sampling, training |
//! | [`embed`] | embedders, ReAct rectification, memory bank, max-cosine similarity |
//! | [`spem`] | SPEM / SPEM-noise / similarity-only scoring |
//! | [`baselines`] | likelihood, complexity, typicality, likelihood-ratio and GMM detectors |
//! | [`entropy`] | Gaussian entropy, entropy power, k-NN entropy, KL, W2 |
//! | [`theorems`] | numerical checks of the entropy/KL bounds on analytic Gaussians |
//! | [`data`] | synthetic datasets, (de)quantisation, CSV I/O |
//! | [`eval`] | AUROC, ROC, sweeps, controlled-λ and benchmark protocols |
//! | [`config`] | flat `section.key=value` experiment configuration |
//!
//! All scores share one orientation: higher means more anomalous.

pub mod baselines;
pub mod config;
pub mod data;
pub mod embed;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod flow;
mod io;
pub mod rng;
pub mod spem;
pub mod theorems;

pub use error::{Error, Result};

/// Row-major batch of samples, one sample per row.
pub type Batch = ndarray::Array2<f64>;
