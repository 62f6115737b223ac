//! Simulation-based NLL, the variance self-consistency loss and their
//! λ-weighted semi-supervised combination.
//!
//! For an unlabeled observation `x*` and proposal draws `θ⁽¹⁾…θ⁽ᴸ⁾`, the
//! self-consistency loss is the unbiased sample variance of
//! `r_l = log p(x*|θ⁽ˡ⁾) + log p(θ⁽ˡ⁾) − log q(θ⁽ˡ⁾|h(x*))`.
//! Proposal draws are constants of the iteration: gradients flow through
//! `log q` (and through `log q(x*|θ)` when the likelihood is estimated), never
//! through the sampler.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::approximator::Approximator;
use crate::diffmath::{l2_penalty, l2_penalty_backward, repeat_rows, repeat_rows_backward, Gradients, Mode, ParamStore};
use crate::model_zoo::{OracleResult, SimModel};
use crate::rng::Rng;
use crate::summary::Observation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    CurrentPosterior,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    Known,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub sc: f64,
    pub l2: f64,
    pub total: f64,
    pub lambda_used: f64,
}

impl LossBreakdown {
    pub fn new(nll: f64, sc: f64, l2: f64, lambda: f64) -> Self {
        Self {
            nll,
            sc,
            l2,
            total: nll + lambda * sc + l2,
            lambda_used: lambda,
        }
    }
}

/// Anything that can be sampled and evaluated as `q(θ | x)`.
pub trait PosteriorDensity {
    fn draw(&self, x: &Observation, n: usize, rng: &mut Rng) -> Result<Array2<f64>>;
    fn log_density(&self, thetas: &Array2<f64>, x: &Observation) -> Result<Array1<f64>>;
}

pub trait LikelihoodDensity {
    fn log_likelihood(&self, theta: &[f64], x: &Observation) -> Result<f64>;
}

pub trait Prior {
    fn log_prior(&self, theta: &[f64]) -> f64;
    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64>;
}

impl<T: SimModel + ?Sized> Prior for T {
    fn log_prior(&self, theta: &[f64]) -> f64 {
        SimModel::log_prior(self, theta)
    }

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        SimModel::sample_prior(self, rng)
    }
}

impl PosteriorDensity for Approximator {
    fn draw(&self, x: &Observation, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        self.sample_posterior(x, n, rng)
    }

    fn log_density(&self, thetas: &Array2<f64>, x: &Observation) -> Result<Array1<f64>> {
        self.log_posterior(thetas, x)
    }
}

/// The model's own likelihood.
pub struct AnalyticLikelihood<'a>(pub &'a dyn SimModel);

impl LikelihoodDensity for AnalyticLikelihood<'_> {
    fn log_likelihood(&self, theta: &[f64], x: &Observation) -> Result<f64> {
        Ok(self.0.log_likelihood(theta, x))
    }
}

/// The likelihood network of an approximator.
pub struct EstimatedLikelihood<'a>(pub &'a Approximator);

impl LikelihoodDensity for EstimatedLikelihood<'_> {
    fn log_likelihood(&self, theta: &[f64], x: &Observation) -> Result<f64> {
        self.0.log_likelihood_estimate(theta, x)
    }
}

/// `log q(x|θ) = c` for every input.
pub struct ConstantLikelihood(pub f64);

impl LikelihoodDensity for ConstantLikelihood {
    fn log_likelihood(&self, _: &[f64], _: &Observation) -> Result<f64> {
        Ok(self.0)
    }
}

/// Diagonal Gaussian `q(θ|x)` that ignores `x`; wires analytic posteriors or
/// the prior in place of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl From<&OracleResult> for DiagonalGaussian {
    fn from(o: &OracleResult) -> Self {
        Self {
            mean: o.mean.clone(),
            sd: o.sd.clone(),
        }
    }
}

impl PosteriorDensity for DiagonalGaussian {
    fn draw(&self, _: &Observation, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        let oracle = OracleResult {
            kind: crate::model_zoo::OracleKind::Analytic,
            mean: self.mean.clone(),
            sd: self.sd.clone(),
            samples: None,
            diagnostics: None,
        };
        Ok(oracle.sample_gaussian(n, rng))
    }

    fn log_density(&self, thetas: &Array2<f64>, _: &Observation) -> Result<Array1<f64>> {
        Ok(thetas
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.sd))
                    .map(|(t, (m, s))| {
                        let z = (t - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * crate::flow::LOG_2PI
                    })
                    .sum()
            })
            .collect())
    }
}

/// Unbiased sample variance `(1/(L−1)) Σ (r_l − r̄)²`.
pub fn sample_variance(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let mean = shifted_mean(r);
    let shift = r.first().copied().unwrap_or(0.0);
    r.iter().map(|v| ((v - shift) - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

// Mean of `r - r[0]`. Centering on the first value keeps constant inputs
// exactly zero instead of leaving summation round-off.
fn shifted_mean(r: &[f64]) -> f64 {
    let shift = r.first().copied().unwrap_or(0.0);
    r.iter().map(|v| v - shift).sum::<f64>() / r.len() as f64
}

/// `∂Var/∂r_l = 2 (r_l − r̄) / (L − 1)`.
fn sample_variance_grad(r: &[f64]) -> Vec<f64> {
    let n = r.len() as f64;
    let mean = shifted_mean(r);
    let shift = r.first().copied().unwrap_or(0.0);
    r.iter().map(|v| 2.0 * ((v - shift) - mean) / (n - 1.0)).collect()
}

fn check_l(l: usize) -> Result<()> {
    if l < 2 {
        return Err(Error::Config(format!("self-consistency needs L ≥ 2 proposal draws, got {l}")));
    }
    Ok(())
}

/// Draws `L` proposal parameters for `x*`.
pub fn draw_proposal(
    q: &dyn PosteriorDensity,
    prior: &dyn Prior,
    x_star: &Observation,
    l: usize,
    proposal: ProposalKind,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    match proposal {
        ProposalKind::CurrentPosterior => q.draw(x_star, l, rng),
        ProposalKind::Prior => {
            let rows: Vec<Array1<f64>> = (0..l).map(|_| Array1::from(prior.sample_prior(rng))).collect();
            Ok(crate::diffmath::to_rows(&rows))
        }
    }
}

/// Log self-consistency ratios `r_l` for fixed draws. Computed as
/// `log_lik + (log_prior − log_q)` so a posterior equal to the prior cancels
/// exactly.
pub fn log_ratios(
    q: &dyn PosteriorDensity,
    likelihood: &dyn LikelihoodDensity,
    prior: &dyn Prior,
    x_star: &Observation,
    draws: &Array2<f64>,
) -> Result<Vec<f64>> {
    let log_q = q.log_density(draws, x_star)?;
    draws
        .rows()
        .into_iter()
        .zip(log_q.iter())
        .enumerate()
        .map(|(i, (theta, lq))| {
            let theta = theta.to_vec();
            let r = likelihood.log_likelihood(&theta, x_star)? + (prior.log_prior(&theta) - lq);
            if r.is_finite() {
                Ok(r)
            } else {
                Err(Error::numerical("sc_variance_loss", format!("non-finite log ratio at draw {i}")))
            }
        })
        .collect()
}

/// Variance self-consistency loss for one unlabeled observation (value only).
pub fn sc_variance_loss(
    q: &dyn PosteriorDensity,
    likelihood: &dyn LikelihoodDensity,
    prior: &dyn Prior,
    x_star: &Observation,
    l: usize,
    proposal: ProposalKind,
    rng: &mut Rng,
) -> Result<f64> {
    check_l(l)?;
    let draws = draw_proposal(q, prior, x_star, l, proposal, rng)?;
    Ok(sample_variance(&log_ratios(q, likelihood, prior, x_star, &draws)?))
}

/// Self-consistency loss with an approximate likelihood `q(x|θ)` in place
/// of the analytic one. With both densities approximate the loss is no longer
/// strictly proper: any pair with `q(θ|x) ∝ q(x|θ) p(θ)` scores zero.
pub fn sc_variance_loss_nple(
    q_posterior: &dyn PosteriorDensity,
    q_likelihood: &dyn LikelihoodDensity,
    prior: &dyn Prior,
    x_star: &Observation,
    l: usize,
    proposal: ProposalKind,
    rng: &mut Rng,
) -> Result<f64> {
    sc_variance_loss(q_posterior, q_likelihood, prior, x_star, l, proposal, rng)
}

/// Per-sample-mean posterior NLL `−(1/N) Σ log q(θ_n | h(x_n))` for an
/// approximator's current parameters.
pub fn nll_loss(approx: &Approximator, thetas: &Array2<f64>, obs: &[&Observation]) -> Result<f64> {
    nll_train(approx, &approx.params, thetas, obs, &mut Mode::Eval, None)
}

fn check_finite(values: &Array1<f64>, op: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::numerical(op, format!("non-finite log-density at sample {i}"))),
        None => Ok(()),
    }
}

/// Posterior NLL with optional gradient accumulation (`grads` scaled by the
/// given factor).
pub fn nll_train(
    approx: &Approximator,
    params: &ParamStore,
    thetas: &Array2<f64>,
    obs: &[&Observation],
    mode: &mut Mode<'_>,
    grads: Option<(&mut Gradients, f64)>,
) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::Input("labeled batch is empty".into()));
    }
    let n = obs.len() as f64;
    let (cond, s_cache) = approx.summary.forward(params, obs, mode)?;
    let (lp, f_cache) = approx.posterior.log_prob_train(params, thetas, &cond, mode)?;
    check_finite(&lp, "nll_loss")?;
    if let Some((grads, scale)) = grads {
        let w = Array1::from_elem(lp.len(), -scale / n);
        let (_, gc) = approx.posterior.log_prob_backward(params, &f_cache, &w, grads);
        approx.summary.backward(params, &s_cache, gc, grads);
    }
    Ok(-lp.sum() / n)
}

/// Stacks every row of every observation with its θ repeated per row.
fn likelihood_rows(thetas: &Array2<f64>, obs: &[&Observation]) -> (Array2<f64>, Array2<f64>, usize) {
    let k = obs[0].nrows();
    let cols = obs[0].ncols();
    let mut y = Array2::zeros((obs.len() * k, cols));
    for (i, o) in obs.iter().enumerate() {
        y.slice_mut(ndarray::s![i * k..(i + 1) * k, ..]).assign(o);
    }
    (y, repeat_rows(thetas, k), k)
}

/// Likelihood-network NLL `−(1/N) Σ_n Σ_k log q(x_n⁽ᵏ⁾ | θ_n)`.
pub fn likelihood_nll_train(
    approx: &Approximator,
    params: &ParamStore,
    thetas: &Array2<f64>,
    obs: &[&Observation],
    mode: &mut Mode<'_>,
    grads: Option<(&mut Gradients, f64)>,
) -> Result<f64> {
    let flow = approx
        .likelihood
        .as_ref()
        .ok_or_else(|| Error::Config("estimated likelihood requires a likelihood network".into()))?;
    let n = obs.len() as f64;
    let (y, cond, _) = likelihood_rows(thetas, obs);
    let (lp, cache) = flow.log_prob_train(params, &y, &cond, mode)?;
    check_finite(&lp, "likelihood_nll")?;
    if let Some((grads, scale)) = grads {
        let w = Array1::from_elem(lp.len(), -scale / n);
        flow.log_prob_backward(params, &cache, &w, grads);
    }
    Ok(-lp.sum() / n)
}

/// Proposal draws for a batch of unlabeled observations, taken from the
/// current posterior in evaluation mode (no dropout) or from the prior.
pub fn draw_proposals(
    approx: &Approximator,
    params: &ParamStore,
    model: &dyn SimModel,
    x_stars: &[&Observation],
    l: usize,
    proposal: ProposalKind,
    rng: &mut Rng,
) -> Result<Vec<Array2<f64>>> {
    check_l(l)?;
    match proposal {
        ProposalKind::CurrentPosterior => {
            let cond = approx.summary.forward_eval(params, x_stars)?;
            let cond = repeat_rows(&cond, l);
            let thetas = approx.posterior.sample_batch(params, &cond, rng)?;
            Ok((0..x_stars.len())
                .map(|m| thetas.slice(ndarray::s![m * l..(m + 1) * l, ..]).to_owned())
                .collect())
        }
        ProposalKind::Prior => {
            let dim = approx.param_dim();
            Ok(x_stars
                .iter()
                .map(|_| {
                    let v: Vec<f64> = (0..l).flat_map(|_| model.sample_prior(rng)).collect();
                    Array2::from_shape_vec((l, dim), v).expect("prior draw shape")
                })
                .collect())
        }
    }
}

/// Mean self-consistency loss over `x_stars` for fixed proposal draws, with
/// optional gradient accumulation through `log q(θ|h(x*))` and, in estimated
/// mode, `log q(x*|θ)`.
#[allow(clippy::too_many_arguments)]
pub fn sc_train(
    approx: &Approximator,
    params: &ParamStore,
    model: &dyn SimModel,
    likelihood_mode: LikelihoodMode,
    x_stars: &[&Observation],
    draws: &[Array2<f64>],
    mode: &mut Mode<'_>,
    grads: Option<(&mut Gradients, f64)>,
) -> Result<f64> {
    let m = x_stars.len();
    if m == 0 {
        return Ok(0.0);
    }
    let l = draws[0].nrows();
    check_l(l)?;
    let views: Vec<_> = draws.iter().map(|d| d.view()).collect();
    let thetas = ndarray::concatenate(ndarray::Axis(0), &views).expect("stack draws");

    let (cond, s_cache) = approx.summary.forward(params, x_stars, mode)?;
    let cond_rep = repeat_rows(&cond, l);
    let (log_q, f_cache) = approx.posterior.log_prob_train(params, &thetas, &cond_rep, mode)?;

    let mut lik_cache = None;
    let log_lik: Vec<f64> = match likelihood_mode {
        LikelihoodMode::Known => (0..m * l)
            .map(|i| model.log_likelihood(&thetas.row(i).to_vec(), x_stars[i / l]))
            .collect(),
        LikelihoodMode::Estimated => {
            let flow = approx
                .likelihood
                .as_ref()
                .ok_or_else(|| Error::Config("estimated likelihood requires a likelihood network".into()))?;
            let rep_obs: Vec<&Observation> = (0..m * l).map(|i| x_stars[i / l]).collect();
            let (y, c, k) = likelihood_rows(&thetas, &rep_obs);
            let (lp, cache) = flow.log_prob_train(params, &y, &c, mode)?;
            let sums = (0..m * l).map(|i| lp.slice(ndarray::s![i * k..(i + 1) * k]).sum()).collect();
            lik_cache = Some((cache, k));
            sums
        }
    };

    let mut r = Vec::with_capacity(m * l);
    for i in 0..m * l {
        let theta = thetas.row(i).to_vec();
        let v = log_lik[i] + (model.log_prior(&theta) - log_q[i]);
        if !v.is_finite() {
            return Err(Error::numerical(
                "sc_variance_loss",
                format!("non-finite log ratio for observation {} draw {}", i / l, i % l),
            ));
        }
        r.push(v);
    }
    let loss = r.chunks(l).map(sample_variance).sum::<f64>() / m as f64;

    if let Some((grads, scale)) = grads {
        let d_r: Vec<f64> = r
            .chunks(l)
            .flat_map(sample_variance_grad)
            .map(|g| g * scale / m as f64)
            .collect();
        let w_q = Array1::from_iter(d_r.iter().map(|g| -g));
        let (_, gc) = approx.posterior.log_prob_backward(params, &f_cache, &w_q, grads);
        approx.summary.backward(params, &s_cache, repeat_rows_backward(&gc, l), grads);
        if let (Some((cache, k)), Some(flow)) = (&lik_cache, &approx.likelihood) {
            let w_lik = Array1::from_iter(d_r.iter().flat_map(|g| std::iter::repeat(*g).take(*k)));
            flow.log_prob_backward(params, cache, &w_lik, grads);
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub lambda: f64,
    pub l: usize,
    pub gamma_l2: f64,
    pub proposal: ProposalKind,
    pub likelihood_mode: LikelihoodMode,
}

/// `nll + λ·sc + l2` for one iteration, accumulating the full gradient into
/// `grads`. With `λ = 0` or no unlabeled data the self-consistency branch
/// (unlabeled data, proposal draws, likelihood) is never evaluated.
#[allow(clippy::too_many_arguments)]
pub fn semi_supervised_loss(
    approx: &Approximator,
    params: &ParamStore,
    model: &dyn SimModel,
    thetas: &Array2<f64>,
    labeled: &[&Observation],
    unlabeled: &[&Observation],
    settings: &LossSettings,
    dropout_rng: &mut Rng,
    proposal_rng: &mut Rng,
    grads: &mut Gradients,
) -> Result<LossBreakdown> {
    let mut nll = nll_train(approx, params, thetas, labeled, &mut Mode::Train(dropout_rng), Some((grads, 1.0)))?;
    if settings.likelihood_mode == LikelihoodMode::Estimated {
        nll += likelihood_nll_train(approx, params, thetas, labeled, &mut Mode::Train(dropout_rng), Some((grads, 1.0)))?;
    }
    let sc = if settings.lambda != 0.0 && !unlabeled.is_empty() {
        let draws = draw_proposals(approx, params, model, unlabeled, settings.l, settings.proposal, proposal_rng)?;
        sc_train(
            approx,
            params,
            model,
            settings.likelihood_mode,
            unlabeled,
            &draws,
            &mut Mode::Train(dropout_rng),
            Some((grads, settings.lambda)),
        )?
    } else {
        0.0
    };
    let l2 = l2_penalty(params, settings.gamma_l2);
    l2_penalty_backward(params, settings.gamma_l2, grads);
    let breakdown = LossBreakdown::new(nll, sc, l2, settings.lambda);
    if !breakdown.total.is_finite() {
        return Err(Error::numerical("semi_supervised_loss", "non-finite total loss"));
    }
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::ArchConfig;
    use crate::diffmath::{finite_difference_gradient, gradient_check_ratio};
    use crate::flow::FlowConfig;
    use crate::model_zoo::{gaussian_analytic_posterior, GaussianModel};
    use crate::rng::SeedTree;
    use crate::summary::SummaryConfig;
    use rand::Rng as _;

    fn point(v: &[f64]) -> Observation {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    fn prior_density(model: &GaussianModel) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: model.mu_prior.clone(),
            sd: vec![model.var_prior.sqrt(); model.dim],
        }
    }

    #[test]
    fn zero_at_analytic_posterior() {
        let model = GaussianModel::new(1, 1);
        let mut rng = SeedTree::new(0).stream("sc", &[]);
        for x in [-2.0, 0.0, 1.0, 3.0, 7.5] {
            let obs = point(&[x]);
            let q = DiagonalGaussian::from(&gaussian_analytic_posterior(&model, &obs));
            for l in [2, 32, 1000] {
                let loss = sc_variance_loss(&q, &AnalyticLikelihood(&model), &model, &obs, l, ProposalKind::CurrentPosterior, &mut rng).unwrap();
                assert!(loss <= 1e-18, "x={x} L={l}: {loss}");
            }
        }
    }

    #[test]
    fn prior_as_posterior_has_population_value_half() {
        // r(θ) = −(x−θ)²/2 + const with θ ~ N(0,1), x = 0: Var[θ²/2] = 2/4 = 0.5.
        let model = GaussianModel::new(1, 1);
        let q = prior_density(&model);
        let mut rng = SeedTree::new(1).stream("sc", &[]);
        let loss = sc_variance_loss(&q, &AnalyticLikelihood(&model), &model, &point(&[0.0]), 1_000_000, ProposalKind::Prior, &mut rng).unwrap();
        assert!((loss - 0.5).abs() < 0.005, "{loss}");
    }

    #[test]
    fn constant_ratios_and_small_l() {
        assert_eq!(sample_variance(&[3.0; 10]), 0.0);
        let model = GaussianModel::new(1, 1);
        let q = prior_density(&model);
        let mut rng = SeedTree::new(1).stream("sc", &[]);
        let err = sc_variance_loss(&q, &AnalyticLikelihood(&model), &model, &point(&[0.0]), 1, ProposalKind::Prior, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn nple_with_analytic_likelihood_is_identical() {
        let model = GaussianModel::new(2, 1);
        let q = DiagonalGaussian {
            mean: vec![0.3, -0.2],
            sd: vec![0.8, 1.1],
        };
        let obs = point(&[1.0, 2.0]);
        let tree = SeedTree::new(3);
        let a = sc_variance_loss(&q, &AnalyticLikelihood(&model), &model, &obs, 64, ProposalKind::CurrentPosterior, &mut tree.stream("p", &[])).unwrap();
        let b = sc_variance_loss_nple(&q, &AnalyticLikelihood(&model), &model, &obs, 64, ProposalKind::CurrentPosterior, &mut tree.stream("p", &[])).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn degenerate_nple_pair_scores_zero() {
        let model = GaussianModel::new(2, 1);
        let q = prior_density(&model);
        let mut rng = SeedTree::new(4).stream("p", &[]);
        let obs = point(&[4.0, -3.0]);
        let loss = sc_variance_loss_nple(&q, &ConstantLikelihood(-4.2), &model, &obs, 257, ProposalKind::CurrentPosterior, &mut rng).unwrap();
        assert_eq!(loss, 0.0);
        // ... while the posterior it encodes is far from the truth.
        let exact = gaussian_analytic_posterior(&model, &obs);
        assert!((exact.mean[0] - q.mean[0]).abs() > 1.0);
    }

    #[test]
    fn strict_properness_ordering() {
        let model = GaussianModel::new(1, 1);
        for x in [0.0, 1.0, 2.0, 3.0] {
            let obs = point(&[x]);
            let exact = DiagonalGaussian::from(&gaussian_analytic_posterior(&model, &obs));
            let prior = prior_density(&model);
            let tree = SeedTree::new(5);
            let at_exact = sc_variance_loss(&exact, &AnalyticLikelihood(&model), &model, &obs, 10_000, ProposalKind::Prior, &mut tree.stream("p", &[])).unwrap();
            let at_prior = sc_variance_loss(&prior, &AnalyticLikelihood(&model), &model, &obs, 10_000, ProposalKind::Prior, &mut tree.stream("p", &[])).unwrap();
            assert!(at_exact <= 1e-12);
            assert!(at_prior >= 0.4, "x={x}: {at_prior}");
        }
    }

    #[test]
    fn monotone_in_mean_error() {
        let model = GaussianModel::new(1, 1);
        let obs = point(&[2.0]);
        let exact = gaussian_analytic_posterior(&model, &obs);
        let mut rng = SeedTree::new(6).stream("p", &[]);
        let draws = exact.sample_gaussian(10_000, &mut rng);
        let mut last = -1.0;
        for offset in [0.0, 0.1, 0.25, 0.5, 1.0, 2.0] {
            let q = DiagonalGaussian {
                mean: vec![exact.mean[0] + offset],
                sd: exact.sd.clone(),
            };
            let r = log_ratios(&q, &AnalyticLikelihood(&model), &model, &obs, &draws).unwrap();
            let v = sample_variance(&r);
            assert!(v > last, "offset {offset}: {v} <= {last}");
            last = v;
        }
    }

    fn small_approx(dim: usize, estimated: bool, seed: u64) -> Approximator {
        let flow = |d: usize, c: usize| FlowConfig {
            coupling_layers: 2,
            hidden_units: 6,
            dropout: 0.0,
            ..FlowConfig::new(d, c)
        };
        let arch = ArchConfig {
            summary: SummaryConfig::None { rows: 1, features: dim },
            posterior: flow(dim, dim),
            likelihood: estimated.then(|| flow(dim, dim)),
        };
        let mut rng = SeedTree::new(seed).stream("init", &[]);
        let mut approx = Approximator::new(arch, &mut rng).unwrap();
        for v in approx.params.values_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
        approx
    }

    fn sc_gradient_check(estimated: bool) {
        let model = GaussianModel::new(2, 1);
        let approx = small_approx(2, estimated, 8);
        let mut rng = SeedTree::new(9).stream("data", &[]);
        let xs: Vec<Observation> = (0..3).map(|_| point(&[rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0)])).collect();
        let refs: Vec<&Observation> = xs.iter().collect();
        let draws = draw_proposals(&approx, &approx.params, &model, &refs, 5, ProposalKind::CurrentPosterior, &mut rng).unwrap();
        let mode = if estimated { LikelihoodMode::Estimated } else { LikelihoodMode::Known };
        let mut grads = Gradients::zeros_like(&approx.params);
        sc_train(&approx, &approx.params, &model, mode, &refs, &draws, &mut Mode::Eval, Some((&mut grads, 1.0))).unwrap();
        let fd = finite_difference_gradient(&approx.params, 1e-5, |ps| {
            sc_train(&approx, ps, &model, mode, &refs, &draws, &mut Mode::Eval, None).unwrap()
        });
        let ratio = gradient_check_ratio(grads.values(), &fd, 1e-4, 1e-7);
        assert!(ratio <= 1.0, "estimated={estimated}: ratio {ratio}");
    }

    #[test]
    fn sc_gradient_matches_finite_differences() {
        sc_gradient_check(false);
    }

    #[test]
    fn nple_sc_gradient_matches_finite_differences() {
        sc_gradient_check(true);
    }

    #[test]
    fn likelihood_nll_gradient_matches_finite_differences() {
        let approx = small_approx(2, true, 12);
        let mut rng = SeedTree::new(13).stream("data", &[]);
        let thetas = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(-1.0..1.0));
        let xs: Vec<Observation> = (0..4).map(|_| point(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])).collect();
        let refs: Vec<&Observation> = xs.iter().collect();
        let mut grads = Gradients::zeros_like(&approx.params);
        likelihood_nll_train(&approx, &approx.params, &thetas, &refs, &mut Mode::Eval, Some((&mut grads, 1.0))).unwrap();
        let fd = finite_difference_gradient(&approx.params, 1e-5, |ps| {
            likelihood_nll_train(&approx, ps, &thetas, &refs, &mut Mode::Eval, None).unwrap()
        });
        assert!(gradient_check_ratio(grads.values(), &fd, 1e-4, 1e-7) <= 1.0);
    }

    #[test]
    fn nll_examples() {
        let arch = ArchConfig {
            summary: SummaryConfig::None { rows: 1, features: 1 },
            posterior: FlowConfig::new(1, 1),
            likelihood: None,
        };
        let approx = Approximator::new(arch, &mut SeedTree::new(0).stream("init", &[])).unwrap();
        let x = point(&[1.3]);
        let theta = Array2::zeros((1, 1));
        let single = nll_loss(&approx, &theta, &[&x]).unwrap();
        assert!((single - 0.918_938_533_204_672_7).abs() < 1e-12);
        let y = point(&[-0.4]);
        let theta = Array2::from_shape_vec((1, 1), vec![0.7]).unwrap();
        let one = nll_loss(&approx, &theta, &[&y]).unwrap();
        let dup = nll_loss(&approx, &Array2::from_elem((3, 1), 0.7), &[&y, &y, &y]).unwrap();
        assert!((one - dup).abs() < 1e-15);
        assert!(nll_loss(&approx, &Array2::zeros((0, 1)), &[]).is_err());
    }

    #[test]
    fn breakdown_identity() {
        let b = LossBreakdown::new(1.25, 0.5, 0.01, 0.0);
        assert_eq!(b.total, 1.25 + 0.01);
        let b = LossBreakdown::new(1.25, 0.5, 0.01, 1.0);
        assert_eq!(b.total, 1.25 + 0.5 + 0.01);
    }
}
