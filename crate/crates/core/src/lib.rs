//! Gradient-based MCMC for latent Gaussian models `π(x) ∝ exp{f(x)} N(x | 0, C)`.
//!
//! Every sampler works in the eigenbasis of `C`, so after a single
//! eigendecomposition each iteration costs a fixed number of dense
//! matrix–vector products.

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod hyper;
pub mod oracle;
pub mod samplers;
pub mod spectral;
pub mod targets;

pub use error::{LgmError, Result};
