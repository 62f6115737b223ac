//! The trainable bundle: summary network, posterior flow `q(θ|h(x))` and an
//! optional likelihood flow `q(x|θ)`, sharing one [`ParamStore`].

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::diffmath::ParamStore;
use crate::flow::{ConditionalFlow, FlowConfig};
use crate::rng::Rng;
use crate::summary::{Observation, SummaryConfig, SummaryNet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub summary: SummaryConfig,
    pub posterior: FlowConfig,
    /// Present when the likelihood is estimated by a flow over single rows
    /// of an observation, conditioned on θ.
    pub likelihood: Option<FlowConfig>,
}

#[derive(Debug, Clone)]
pub struct Approximator {
    pub arch: ArchConfig,
    pub summary: SummaryNet,
    pub posterior: ConditionalFlow,
    pub likelihood: Option<ConditionalFlow>,
    pub params: ParamStore,
}

impl Approximator {
    pub fn new(arch: ArchConfig, rng: &mut Rng) -> Result<Self> {
        if arch.posterior.cond_dim != arch.summary.output_dim() {
            return Err(Error::Config(format!(
                "posterior condition dim {} does not match summary output {}",
                arch.posterior.cond_dim,
                arch.summary.output_dim()
            )));
        }
        if let Some(lik) = &arch.likelihood {
            if lik.cond_dim != arch.posterior.dim {
                return Err(Error::Config("likelihood flow must be conditioned on θ".into()));
            }
        }
        let mut params = ParamStore::new();
        let summary = SummaryNet::new(&mut params, "summary", &arch.summary, rng)?;
        let posterior = ConditionalFlow::new(&mut params, "posterior", arch.posterior.clone(), rng)?;
        let likelihood = match &arch.likelihood {
            Some(cfg) => Some(ConditionalFlow::new(&mut params, "likelihood", cfg.clone(), rng)?),
            None => None,
        };
        Ok(Self {
            arch,
            summary,
            posterior,
            likelihood,
            params,
        })
    }

    /// Rebuilds the networks for `arch` and installs `params`, which must have
    /// exactly the layout the architecture registers.
    pub fn with_params(arch: ArchConfig, params: ParamStore) -> Result<Self> {
        let mut rng = crate::rng::SeedTree::new(0).stream("layout", &[]);
        let mut fresh = Self::new(arch, &mut rng)?;
        if !fresh.params.same_layout(&params) {
            return Err(Error::Parse("parameter layout does not match architecture".into()));
        }
        fresh.params = params;
        Ok(fresh)
    }

    pub fn param_dim(&self) -> usize {
        self.posterior.dim()
    }

    pub fn condition(&self, obs: &Observation) -> Result<Vec<f64>> {
        crate::summary::summarize(&self.summary, &self.params, obs)
    }

    /// `n` posterior draws for one observation.
    pub fn sample_posterior(&self, obs: &Observation, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        let c = self.condition(obs)?;
        self.posterior.sample(&self.params, n, &c, rng)
    }

    /// `log q(θ_i | h(x))` for each row of `thetas`.
    pub fn log_posterior(&self, thetas: &Array2<f64>, obs: &Observation) -> Result<Array1<f64>> {
        let c = self.condition(obs)?;
        let cond = Array2::from_shape_fn((thetas.nrows(), c.len()), |(_, j)| c[j]);
        self.posterior.log_prob_batch(&self.params, thetas, &cond)
    }

    /// `Σ_k log q(x⁽ᵏ⁾ | θ)` under the likelihood flow.
    pub fn log_likelihood_estimate(&self, theta: &[f64], obs: &Observation) -> Result<f64> {
        let flow = self
            .likelihood
            .as_ref()
            .ok_or_else(|| Error::Config("approximator has no likelihood network".into()))?;
        let cond = Array2::from_shape_fn((obs.nrows(), theta.len()), |(_, j)| theta[j]);
        Ok(flow.log_prob_batch(&self.params, obs, &cond)?.sum())
    }
}
