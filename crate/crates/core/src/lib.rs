//! Semi-supervised amortized Bayesian inference.
//!
//! Conditional normalizing flows are trained on simulated `(θ, x)` pairs with
//! the usual maximum-likelihood loss and, optionally, on unlabeled observations
//! `x*` through the variance of the log self-consistency ratio
//! `log p(x*|θ) + log p(θ) − log q(θ|h(x*))`.
//!
//! Module map:
//!
//! - [`diffmath`]: parameter store, dense layers with hand-written backward rules.
//! - [`flow`]: affine coupling flows with exact log-density and sampling.
//! - [`summary`]: deep set and LSTM summary networks.
//! - [`model_zoo`]: Gaussian means and AR(1) simulators, oracles, MH sampler.
//! - [`losses`]: NLL, self-consistency and semi-supervised losses.
//! - [`training`]: Adam, training loop, checkpoints.
//! - [`metrics`]: MMD, bias and 1-D Wasserstein metrics.
//! - [`harness`]: experiment configuration, orchestration and report emission.

pub mod approximator;
pub mod diffmath;
pub mod error;
pub mod flow;
pub mod harness;
pub mod hexfloat;
pub mod losses;
pub mod metrics;
pub mod model_zoo;
pub mod rng;
pub mod summary;
pub mod training;

pub use error::{Error, Result};
