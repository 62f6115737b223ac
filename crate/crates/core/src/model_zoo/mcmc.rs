//! Random-walk Metropolis reference sampler.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{McmcDiagnostics, OracleKind, OracleResult, SimModel};
use crate::rng::Rng;
use crate::summary::Observation;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    /// Initial per-coordinate proposal sd as a fraction of the prior sd.
    pub initial_step_fraction: f64,
    pub adapt_window: usize,
    pub max_adapt_rounds: usize,
    pub target_acceptance: (f64, f64),
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            burn_in: 5_000,
            samples: 4_000,
            thin: 5,
            initial_step_fraction: 0.2,
            adapt_window: 1_000,
            max_adapt_rounds: 30,
            target_acceptance: (0.2, 0.5),
        }
    }
}

struct Chain<'a, F: Fn(&[f64]) -> f64> {
    log_density: &'a F,
    state: Vec<f64>,
    current: f64,
    proposal: Vec<f64>,
}

impl<F: Fn(&[f64]) -> f64> Chain<'_, F> {
    /// One joint update with independent per-coordinate Gaussian increments.
    fn step(&mut self, steps: &[f64], rng: &mut Rng) -> bool {
        for ((p, s), st) in self.proposal.iter_mut().zip(&self.state).zip(steps) {
            let eps: f64 = StandardNormal.sample(rng);
            *p = s + st * eps;
        }
        let proposed = (self.log_density)(&self.proposal);
        let log_u: f64 = rng.gen::<f64>().ln();
        if proposed.is_finite() && log_u < proposed - self.current {
            std::mem::swap(&mut self.state, &mut self.proposal);
            self.current = proposed;
            true
        } else {
            false
        }
    }
}

/// Runs adaptation (step sizes tuned toward the target acceptance band and
/// then frozen), burn-in and thinned sampling on `log_density`.
pub fn sample_log_density<F>(
    log_density: &F,
    init: Vec<f64>,
    initial_steps: Vec<f64>,
    config: &MhConfig,
    rng: &mut Rng,
) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> f64,
{
    if config.samples < 2 || config.thin == 0 || config.adapt_window < 10 {
        return Err(Error::Config("MH needs samples ≥ 2, thin ≥ 1, adapt_window ≥ 10".into()));
    }
    let dim = init.len();
    let current = log_density(&init);
    if !current.is_finite() {
        return Err(Error::numerical("mh_reference_posterior", "initial state has non-finite density"));
    }
    let mut chain = Chain {
        log_density,
        proposal: init.clone(),
        state: init,
        current,
    };
    let mut steps = initial_steps;
    let (lo, hi) = config.target_acceptance;
    let mut scale = 1.0;
    for round in 0..config.max_adapt_rounds {
        let mut accepted = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for _ in 0..config.adapt_window {
            accepted += chain.step(&steps, rng) as usize;
            for d in 0..dim {
                sum[d] += chain.state[d];
                sum_sq[d] += chain.state[d] * chain.state[d];
            }
        }
        let rate = accepted as f64 / config.adapt_window as f64;
        if round >= 2 && (lo..=hi).contains(&rate) {
            break;
        }
        // Proposal shape follows the running marginal spread once it is informative.
        let n = config.adapt_window as f64;
        if round >= 1 && accepted > config.adapt_window / 20 {
            for d in 0..dim {
                let var = (sum_sq[d] / n - (sum[d] / n).powi(2)).max(0.0);
                if var > 0.0 {
                    steps[d] = var.sqrt() * 2.38 / (dim as f64).sqrt();
                }
            }
        }
        scale *= ((rate - 0.3) * 2.0).exp();
        if rate < 0.02 {
            scale *= 0.3;
        }
        steps.iter_mut().for_each(|s| *s *= scale);
        scale = 1.0;
    }
    for _ in 0..config.burn_in {
        chain.step(&steps, rng);
    }
    let mut samples = Array2::zeros((config.samples, dim));
    let mut accepted = 0usize;
    for i in 0..config.samples {
        for _ in 0..config.thin {
            accepted += chain.step(&steps, rng) as usize;
        }
        samples.row_mut(i).assign(&ndarray::ArrayView1::from(&chain.state));
    }
    let acceptance_rate = accepted as f64 / (config.samples * config.thin) as f64;
    if !(0.05..=0.8).contains(&acceptance_rate) {
        return Err(Error::Diagnostic(format!(
            "MH acceptance rate {acceptance_rate:.3} outside [0.05, 0.8] after adaptation"
        )));
    }
    let n = config.samples as f64;
    let mean: Vec<f64> = (0..dim).map(|d| samples.column(d).sum() / n).collect();
    let sd: Vec<f64> = (0..dim)
        .map(|d| {
            let m = mean[d];
            (samples.column(d).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    let ess = (0..dim)
        .map(|d| effective_sample_size(&samples.column(d).to_vec()))
        .collect();
    Ok(OracleResult {
        kind: OracleKind::Mcmc,
        mean,
        sd,
        samples: Some(samples),
        diagnostics: Some(McmcDiagnostics {
            acceptance_rate,
            ess,
            step_sizes: steps,
        }),
    })
}

/// Posterior `p(θ | observation)` by random-walk Metropolis, started at the
/// prior mean.
pub fn mh_reference_posterior(
    model: &dyn SimModel,
    observation: &Observation,
    config: &MhConfig,
    rng: &mut Rng,
) -> Result<OracleResult> {
    let log_density = |theta: &[f64]| model.log_joint(theta, observation);
    let steps = model
        .prior_sd()
        .iter()
        .map(|s| s * config.initial_step_fraction)
        .collect();
    sample_log_density(&log_density, model.prior_mean(), steps, config, rng)
}

/// Effective sample size from the initial positive sequence of
/// autocorrelation pair sums.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n / 2 {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64)
}
