use ndarray::{Array2, Axis};
use rand_distr::{Distribution, Normal};

use super::{normal_log_pdf, std_normal, OracleKind, OracleResult, SimModel};
use crate::rng::Rng;
use crate::summary::Observation;
use crate::{Error, Result};

/// Normal means model: `θ ~ N(μ_prior, σ²_prior I)`, `x⁽ᵏ⁾ ~ N(θ, σ²_lik I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub dim: usize,
    pub points: usize,
    pub mu_prior: Vec<f64>,
    pub var_prior: f64,
    pub var_lik: f64,
}

impl GaussianModel {
    /// Default coupling `σ²_lik = K` keeps the information in `x` fixed.
    pub fn new(dim: usize, points: usize) -> Self {
        Self {
            dim,
            points,
            mu_prior: vec![0.0; dim],
            var_prior: 1.0,
            var_lik: points as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.points == 0 {
            return Err(Error::Config("Gaussian model needs D ≥ 1 and K ≥ 1".into()));
        }
        if !(self.var_prior > 0.0 && self.var_lik > 0.0) {
            return Err(Error::Config("Gaussian model variances must be positive".into()));
        }
        if self.mu_prior.len() != self.dim {
            return Err(Error::Config("prior mean length must equal D".into()));
        }
        Ok(())
    }

    /// Observation of `K` points drawn from `N(mean, var·I)`, as used for the
    /// unlabeled (`var = 1`) and evaluation (`var = 0.01`) data sets.
    pub fn shifted_observation(&self, mean: f64, var: f64, rng: &mut Rng) -> Observation {
        let sd = var.sqrt();
        Array2::from_shape_simple_fn((self.points, self.dim), || {
            mean + sd * std_normal(rng)
        })
    }
}

impl SimModel for GaussianModel {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn obs_shape(&self) -> (usize, usize) {
        (self.points, self.dim)
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim).map(|d| format!("theta{d}")).collect()
    }

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        let sd = self.var_prior.sqrt();
        self.mu_prior
            .iter()
            .map(|m| m + sd * std_normal(rng))
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let sd = self.var_prior.sqrt();
        theta
            .iter()
            .zip(&self.mu_prior)
            .map(|(t, m)| normal_log_pdf(*t, *m, sd))
            .sum()
    }

    fn prior_mean(&self) -> Vec<f64> {
        self.mu_prior.clone()
    }

    fn prior_sd(&self) -> Vec<f64> {
        vec![self.var_prior.sqrt(); self.dim]
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Observation {
        let sd = self.var_lik.sqrt();
        Array2::from_shape_fn((self.points, self.dim), |(_, d)| {
            theta[d] + sd * std_normal(rng)
        })
    }

    fn log_likelihood(&self, theta: &[f64], obs: &Observation) -> f64 {
        gaussian_log_likelihood(self, theta, obs)
    }

    fn iid_rows(&self) -> bool {
        true
    }
}

pub fn gaussian_simulate(model: &GaussianModel, n: usize, rng: &mut Rng) -> Vec<(Vec<f64>, Observation)> {
    super::simulate_pairs(model, n, rng)
}

/// `Σ_k Σ_d log N(x⁽ᵏ⁾_d; θ_d, σ²_lik)`.
pub fn gaussian_log_likelihood(model: &GaussianModel, theta: &[f64], x: &Observation) -> f64 {
    let inv_var = 1.0 / model.var_lik;
    let norm = -0.5 * (model.var_lik.ln() + crate::flow::LOG_2PI);
    let mut acc = 0.0;
    for row in x.rows() {
        for (v, t) in row.iter().zip(theta) {
            let r = v - t;
            acc += norm - 0.5 * r * r * inv_var;
        }
    }
    acc
}

/// Conjugate posterior `N(μ_post, σ²_post I)` with
/// `σ²_post = (1/σ²_prior + K/σ²_lik)⁻¹` and
/// `μ_post = σ²_post (μ_prior/σ²_prior + K x̄/σ²_lik)`.
pub fn gaussian_analytic_posterior(model: &GaussianModel, x_obs: &Observation) -> OracleResult {
    let k = x_obs.nrows() as f64;
    let var_post = 1.0 / (1.0 / model.var_prior + k / model.var_lik);
    let xbar = x_obs.mean_axis(Axis(0)).expect("at least one point");
    let mean = model
        .mu_prior
        .iter()
        .zip(xbar.iter())
        .map(|(m, x)| var_post * (m / model.var_prior + k * x / model.var_lik))
        .collect();
    OracleResult {
        kind: OracleKind::Analytic,
        mean,
        sd: vec![var_post.sqrt(); model.dim],
        samples: None,
        diagnostics: None,
    }
}

impl OracleResult {
    /// Exact draws from a diagonal Gaussian oracle.
    pub fn sample_gaussian(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        let dists: Vec<Normal<f64>> = self
            .mean
            .iter()
            .zip(&self.sd)
            .map(|(m, s)| Normal::new(*m, *s).expect("valid normal"))
            .collect();
        Array2::from_shape_fn((n, self.mean.len()), |(_, d)| dists[d].sample(rng))
    }

    /// Log-density of a diagonal Gaussian oracle.
    pub fn gaussian_log_density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(t, (m, s))| normal_log_pdf(*t, *m, *s))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng as _;

    const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

    fn obs(values: &[f64], dim: usize) -> Observation {
        Array2::from_shape_vec((values.len() / dim, dim), values.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_prior_pins_theta() {
        let mut model = GaussianModel::new(2, 1);
        model.mu_prior = vec![1.5, -0.5];
        model.var_prior = 1e-12;
        let mut rng = SeedTree::new(0).stream("sim", &[]);
        for (theta, _) in gaussian_simulate(&model, 100, &mut rng) {
            assert!((theta[0] - 1.5).abs() < 1e-4 && (theta[1] + 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn prior_mean_monte_carlo() {
        let model = GaussianModel::new(1, 1);
        let n = 100_000;
        let mut rng = SeedTree::new(1).stream("sim", &[]);
        let pairs = gaussian_simulate(&model, n, &mut rng);
        let mean = pairs.iter().map(|(t, _)| t[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn marginal_variance_of_point_mean() {
        // Var(x̄) = σ²_prior + σ²_lik / K = 1 + 10/10 = 2.
        let model = GaussianModel::new(1, 10);
        let n = 50_000;
        let mut rng = SeedTree::new(2).stream("sim", &[]);
        let means: Vec<f64> = gaussian_simulate(&model, n, &mut rng)
            .iter()
            .map(|(_, x)| x.mean().unwrap())
            .collect();
        let m = means.iter().sum::<f64>() / n as f64;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Sampling sd of a variance estimate ≈ var·√(2/n).
        assert!((var - 2.0).abs() < 4.0 * 2.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn log_likelihood_examples() {
        let model = GaussianModel::new(1, 1);
        let x = obs(&[0.7], 1);
        assert!((gaussian_log_likelihood(&model, &[0.7], &x) + HALF_LOG_2PI).abs() < 1e-15);
        assert!((gaussian_log_likelihood(&model, &[1.7], &x) + HALF_LOG_2PI + 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_likelihood_matches_elementwise_sum() {
        let mut model = GaussianModel::new(2, 3);
        model.var_lik = 1.7;
        let mut rng = SeedTree::new(3).stream("x", &[]);
        let x = Array2::from_shape_simple_fn((3, 2), || rng.gen_range(-3.0..3.0));
        let theta = [0.4, -1.2];
        let mut oracle = 0.0;
        for k in 0..3 {
            for d in 0..2 {
                let r = x[[k, d]] - theta[d];
                oracle += -0.5 * (2.0 * std::f64::consts::PI * 1.7).ln() - r * r / (2.0 * 1.7);
            }
        }
        assert!((gaussian_log_likelihood(&model, &theta, &x) - oracle).abs() < 1e-12);
    }

    #[test]
    fn analytic_posterior_examples() {
        let model = GaussianModel::new(1, 1);
        let post = gaussian_analytic_posterior(&model, &obs(&[2.0], 1));
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.sd[0].powi(2) - 0.5).abs() < 1e-15);
        let post = gaussian_analytic_posterior(&model, &obs(&[0.0], 1));
        assert_eq!(post.mean[0], 0.0);

        let model = GaussianModel::new(1, 10);
        let x = obs(&[4.0; 10], 1);
        let post = gaussian_analytic_posterior(&model, &x);
        assert!((post.mean[0] - 2.0).abs() < 1e-14);
        assert!((post.sd[0].powi(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        let mut model = GaussianModel::new(2, 1);
        assert!(model.validate().is_ok());
        model.var_lik = 0.0;
        assert!(model.validate().is_err());
    }
}
