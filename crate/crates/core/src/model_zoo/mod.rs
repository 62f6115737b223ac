//! Generative models with priors, simulators, likelihoods and oracle
//! posteriors.

mod ar1;
mod gaussian;
mod mcmc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use ar1::{
    ar1_log_likelihood, ar1_simulate, ingest_ar1_csv, standardize_covariates, write_ar1_csv, Ar1Country,
    Ar1Model, Ar1Params, SyntheticCountries, AR1_PARAM_NAMES,
};
pub use gaussian::{gaussian_analytic_posterior, gaussian_log_likelihood, gaussian_simulate, GaussianModel};
pub use mcmc::{effective_sample_size, mh_reference_posterior, MhConfig};

use crate::rng::Rng;
use crate::summary::Observation;

/// A simulator bundle: prior, simulator and (tractable) likelihood.
pub trait SimModel {
    fn param_dim(&self) -> usize;
    /// `(rows, features)` of one observation.
    fn obs_shape(&self) -> (usize, usize);
    fn param_names(&self) -> Vec<String>;
    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64>;
    fn log_prior(&self, theta: &[f64]) -> f64;
    fn prior_mean(&self) -> Vec<f64>;
    fn prior_sd(&self) -> Vec<f64>;
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Observation;
    fn log_likelihood(&self, theta: &[f64], obs: &Observation) -> f64;

    /// Rows of an observation are i.i.d. given θ, so a likelihood network can
    /// model one row at a time.
    fn iid_rows(&self) -> bool {
        false
    }

    fn log_joint(&self, theta: &[f64], obs: &Observation) -> f64 {
        self.log_likelihood(theta, obs) + self.log_prior(theta)
    }
}

/// `n` labeled pairs `(θ, x)` drawn from the joint model.
pub fn simulate_pairs(model: &dyn SimModel, n: usize, rng: &mut Rng) -> Vec<(Vec<f64>, Observation)> {
    (0..n)
        .map(|_| {
            let theta = model.sample_prior(rng);
            let x = model.simulate(&theta, rng);
            (theta, x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Analytic,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub acceptance_rate: f64,
    pub ess: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub kind: OracleKind,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub samples: Option<Array2<f64>>,
    pub diagnostics: Option<McmcDiagnostics>,
}

impl OracleResult {
    /// Monte Carlo standard error of the posterior mean per coordinate; zero
    /// for analytic oracles.
    pub fn mean_standard_error(&self) -> Vec<f64> {
        match &self.diagnostics {
            Some(d) => self.sd.iter().zip(&d.ess).map(|(s, e)| s / e.max(1.0).sqrt()).collect(),
            None => vec![0.0; self.mean.len()],
        }
    }
}

pub(crate) fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * crate::flow::LOG_2PI
}

pub(crate) fn std_normal(rng: &mut Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}
