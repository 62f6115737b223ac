use std::cell::Cell;

use ndarray::Array2;
use scabi::approximator::{Approximator, ArchConfig};
use scabi::flow::FlowConfig;
use scabi::model_zoo::{GaussianModel, SimModel};
use scabi::rng::{Rng, SeedTree};
use scabi::summary::{Observation, SummaryConfig};
use scabi::training::{train, LabeledData, TrainConfig};

/// Counts likelihood evaluations and forwards everything else.
struct Counting {
    inner: GaussianModel,
    likelihood_calls: Cell<usize>,
}

impl SimModel for Counting {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn obs_shape(&self) -> (usize, usize) {
        self.inner.obs_shape()
    }
    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }
    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        self.inner.sample_prior(rng)
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.inner.log_prior(theta)
    }
    fn prior_mean(&self) -> Vec<f64> {
        self.inner.prior_mean()
    }
    fn prior_sd(&self) -> Vec<f64> {
        self.inner.prior_sd()
    }
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Observation {
        self.inner.simulate(theta, rng)
    }
    fn log_likelihood(&self, theta: &[f64], obs: &Observation) -> f64 {
        self.likelihood_calls.set(self.likelihood_calls.get() + 1);
        self.inner.log_likelihood(theta, obs)
    }
}

fn setup(dim: usize) -> (GaussianModel, LabeledData, Approximator) {
    let model = GaussianModel::new(dim, 1);
    let data = LabeledData::simulate(&model, 256, &mut SeedTree::new(5).stream("d", &[]));
    let arch = ArchConfig {
        summary: SummaryConfig::None { rows: 1, features: dim },
        posterior: FlowConfig {
            coupling_layers: 3,
            hidden_units: 32,
            ..FlowConfig::new(dim, dim)
        },
        likelihood: None,
    };
    let approx = Approximator::new(arch, &mut SeedTree::new(6).stream("init", &[])).unwrap();
    (model, data, approx)
}

fn heldout_nll(approx: &Approximator, model: &GaussianModel) -> f64 {
    let test = LabeledData::simulate(model, 500, &mut SeedTree::new(7).stream("t", &[]));
    let mut total = 0.0;
    for (i, x) in test.observations.iter().enumerate() {
        let theta = test.thetas.row(i).to_owned().insert_axis(ndarray::Axis(0));
        total -= approx.log_posterior(&theta, x).unwrap()[0];
    }
    total / test.len() as f64
}

#[test]
fn nll_decreases_under_pure_npe_training() {
    let (model, data, approx) = setup(2);
    let before = heldout_nll(&approx, &model);
    let cfg = TrainConfig {
        epochs: 50,
        lambda: 0.0,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let out = train(&cfg, approx, &data, &[], &model).unwrap();
    assert!(out.aborted.is_none());
    let first = out.log.first().unwrap().loss.nll;
    let last = out.log.last().unwrap().loss.nll;
    assert!(last < first - 0.2, "training nll {first} -> {last}");
    let after = heldout_nll(&out.approximator, &model);
    assert!(after < before - 0.2, "held-out nll {before} -> {after}");
    assert!(out.log.iter().all(|r| r.loss.sc == 0.0 && r.loss.lambda_used == 0.0));
}

#[test]
fn zero_lambda_never_touches_unlabeled_data_or_the_likelihood() {
    let (inner, data, approx) = setup(2);
    let model = Counting {
        inner,
        likelihood_calls: Cell::new(0),
    };
    let cfg = TrainConfig {
        epochs: 3,
        lambda: 0.0,
        ..Default::default()
    };
    let poison: Vec<Observation> = vec![Array2::from_elem((1, 2), f64::NAN); 4];
    let a = train(&cfg, approx.clone(), &data, &poison, &model).unwrap();
    assert!(a.aborted.is_none());
    assert_eq!(model.likelihood_calls.get(), 0);
    let b = train(&cfg, approx, &data, &[], &model).unwrap();
    assert_eq!(a.log_jsonl(), b.log_jsonl());
}

#[test]
fn positive_lambda_uses_the_likelihood() {
    let (inner, data, approx) = setup(1);
    let model = Counting {
        inner,
        likelihood_calls: Cell::new(0),
    };
    let unlabeled: Vec<Observation> = vec![Array2::from_elem((1, 1), 3.0); 2];
    let cfg = TrainConfig {
        epochs: 1,
        l: 4,
        ..Default::default()
    };
    train(&cfg, approx, &data, &unlabeled, &model).unwrap();
    assert!(model.likelihood_calls.get() > 0);
}
