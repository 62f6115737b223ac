//! Experiment orchestration: configs, data generation and ingestion, baseline
//! versus self-consistency training, evaluation against oracles, and the data
//! files behind contour and forest plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::approximator::{Approximator, ArchConfig};
use crate::diffmath::Activation;
use crate::flow::FlowConfig;
use crate::losses::LikelihoodMode;
use crate::metrics::{write_metrics_csv, write_metrics_json, Bandwidth, MetricReport, MetricRow, DEFAULT_EVAL_SAMPLES};
use crate::model_zoo::{
    gaussian_analytic_posterior, ingest_ar1_csv, mh_reference_posterior, standardize_covariates, Ar1Country, Ar1Model,
    GaussianModel, MhConfig, OracleResult, SimModel, SyntheticCountries,
};
use crate::rng::{Rng, SeedTree};
use crate::summary::{Observation, SummaryConfig};
use crate::training::{save_checkpoint, train, LabeledData, Snapshot, TrainConfig, TrainOutcome, CHECKPOINT_VERSION};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const CONTOUR_GRID: usize = 100;
pub const CONTOUR_HALF_WIDTH_SD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Gaussian,
    Ar1,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Gaussian => "gaussian",
            Task::Ar1 => "ar1",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Task::Gaussian),
            "ar1" => Ok(Task::Ar1),
            other => Err(Error::Config(format!("unknown task '{other}' (expected gaussian or ar1)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Npe,
    Sc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Npe => "npe",
            Method::Sc => "sc",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchOverrides {
    #[serde(default)]
    pub coupling_layers: Option<usize>,
    #[serde(default)]
    pub hidden_units: Option<usize>,
    #[serde(default)]
    pub hidden_layers: Option<usize>,
    #[serde(default)]
    pub activation: Option<Activation>,
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $value:expr;)*) => {
        $(fn $name() -> $ty { $value })*
    };
}

defaults! {
    default_task: Task = Task::Gaussian;
    default_dim: usize = 10;
    default_unlabeled: usize = 32;
    default_mu_star: f64 = 3.0;
    default_points: usize = 1;
    default_likelihood: LikelihoodMode = LikelihoodMode::Known;
    default_n_labeled: usize = 1024;
    default_mu_obs: Vec<f64> = (0..12).map(f64::from).collect();
    default_output: PathBuf = PathBuf::from("results");
    default_refits: usize = 1;
    default_eval_samples: usize = DEFAULT_EVAL_SAMPLES;
    default_bandwidth: Bandwidth = Bandwidth::MedianHeuristic;
    default_factor: String = "default".to_string();
    default_countries: usize = 15;
    default_steps: usize = 14;
    default_data_seed: u64 = 2024;
    default_first_year: i64 = 2005;
}

/// One training-plus-evaluation run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_task")]
    pub task: Task,
    /// Parameter dimension `D` (Gaussian task).
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Number of unlabeled observations `M`.
    #[serde(default = "default_unlabeled")]
    pub unlabeled: usize,
    /// Mean `μ*` of the simulated unlabeled observations.
    #[serde(default = "default_mu_star")]
    pub mu_star: f64,
    /// Points per observation `K`; `K > 1` adds a deep set summary network.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_likelihood")]
    pub likelihood_mode: LikelihoodMode,
    /// Labeled simulation budget `N`.
    #[serde(default = "default_n_labeled")]
    pub n_labeled: usize,
    #[serde(default = "default_mu_obs")]
    pub mu_obs: Vec<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ArchOverrides,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_refits")]
    pub refits: usize,
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    /// Label written to the `factor` and `value` metric columns.
    #[serde(default = "default_factor")]
    pub factor: String,
    #[serde(default)]
    pub value: String,
    /// Unlabeled observations from a CSV file instead of the simulator.
    #[serde(default)]
    pub unlabeled_csv: Option<PathBuf>,
    /// Synthetic AR(1) countries; the first `unlabeled` of them also serve as
    /// the unlabeled set.
    #[serde(default = "default_countries")]
    pub countries: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_first_year")]
    pub first_year: i64,
    /// Seed for data that stays fixed across refits (synthetic countries and
    /// their MCMC references).
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default)]
    pub mh: MhConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ExperimentConfig {
    /// Named presets; `desk` shrinks the Gaussian study to laptop scale.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "paper" => {}
            "desk" => {
                cfg.dim = 2;
                cfg.n_labeled = 512;
                cfg.train.epochs = 40;
                cfg.train.unlabeled_batch = Some(8);
            }
            "ar1" => {
                cfg.task = Task::Ar1;
                cfg.unlabeled = 8;
                cfg.mu_obs = Vec::new();
            }
            "ar1-desk" => {
                cfg.task = Task::Ar1;
                cfg.unlabeled = 8;
                cfg.mu_obs = Vec::new();
                cfg.train.epochs = 40;
            }
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_labeled == 0 {
            return Err(Error::Config("n_labeled must be positive".into()));
        }
        if self.refits == 0 {
            return Err(Error::Config("refits must be positive".into()));
        }
        if self.eval_samples < 100 {
            return Err(Error::Config("eval_samples must be at least 100".into()));
        }
        match self.task {
            Task::Gaussian => {
                self.gaussian_model().validate()?;
                if self.mu_obs.is_empty() {
                    return Err(Error::Config("mu_obs sweep is empty".into()));
                }
            }
            Task::Ar1 => {
                if self.likelihood_mode == LikelihoodMode::Estimated {
                    return Err(Error::Config(
                        "estimated likelihood needs i.i.d. rows; the AR(1) task supports only known".into(),
                    ));
                }
                if self.steps == 0 || (self.unlabeled_csv.is_none() && self.countries == 0) {
                    return Err(Error::Config("AR(1) task needs steps ≥ 1 and at least one country".into()));
                }
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.refits as u64).map(|i| self.first_seed + i).collect()
    }

    pub fn gaussian_model(&self) -> GaussianModel {
        GaussianModel::new(self.dim, self.points)
    }

    fn flow(&self, dim: usize, cond: usize, coupling_layers: usize, activation: Activation) -> FlowConfig {
        let base = FlowConfig::new(dim, cond);
        FlowConfig {
            coupling_layers: self.arch.coupling_layers.unwrap_or(coupling_layers),
            hidden_units: self.arch.hidden_units.unwrap_or(base.hidden_units),
            hidden_layers: self.arch.hidden_layers.unwrap_or(base.hidden_layers),
            activation: self.arch.activation.unwrap_or(activation),
            dropout: self.train.dropout,
            ..base
        }
    }

    /// Network architecture for the task: 5 ReLU couplings (Gaussian) or 6 ELU
    /// couplings with an LSTM summary (AR(1)); overrides apply on top.
    pub fn arch_config(&self) -> ArchConfig {
        match self.task {
            Task::Gaussian => {
                let summary = if self.points == 1 {
                    SummaryConfig::None {
                        rows: 1,
                        features: self.dim,
                    }
                } else {
                    SummaryConfig::deep_set(self.dim)
                };
                let cond = summary.output_dim();
                ArchConfig {
                    posterior: self.flow(self.dim, cond, 5, Activation::Relu),
                    likelihood: (self.likelihood_mode == LikelihoodMode::Estimated).then(|| FlowConfig {
                        leading_affine: true,
                        ..self.flow(self.dim, self.dim, 5, Activation::Relu)
                    }),
                    summary,
                }
            }
            Task::Ar1 => {
                let summary = SummaryConfig::recurrent(3);
                ArchConfig {
                    posterior: self.flow(5, summary.output_dim(), 6, Activation::Elu),
                    likelihood: None,
                    summary,
                }
            }
        }
    }

    /// Training settings for one method; the baseline uses λ = 0 and never the
    /// likelihood.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed;
        match method {
            Method::Npe => {
                t.lambda = 0.0;
                t.likelihood_mode = LikelihoodMode::Known;
            }
            Method::Sc => t.likelihood_mode = self.likelihood_mode,
        }
        t
    }
}

/// Replaces `"a.b": v` keys by nested objects so flat config files work.
pub fn expand_dotted_keys(value: serde_json::Value) -> serde_json::Value {
    use serde_json::{Map, Value};
    match value {
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let v = expand_dotted_keys(v);
                let mut parts: Vec<&str> = k.split('.').collect();
                let last = parts.pop().expect("split yields one part");
                let mut cursor = &mut out;
                for p in parts {
                    cursor = cursor
                        .entry(p.to_string())
                        .or_insert_with(|| Value::Object(Map::new()))
                        .as_object_mut()
                        .expect("dotted prefix names an object");
                }
                cursor.insert(last.to_string(), v);
            }
            Value::Object(out)
        }
        other => other,
    }
}

/// Deep-merges `patch` into `base`.
pub fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses a config document on top of `base`.
pub fn parse_config(base: &ExperimentConfig, text: &str) -> Result<ExperimentConfig> {
    let patch: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    apply_patch(base, patch)
}

pub fn apply_patch(base: &ExperimentConfig, patch: serde_json::Value) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(base)?;
    merge_json(&mut value, expand_dotted_keys(patch));
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

/// Unlabeled observations from CSV. AR(1): the country schema, covariates
/// standardized across the file. Gaussian: columns `observation,x0..x{D-1}`
/// with `K` consecutive rows per observation.
pub fn ingest_unlabeled_csv(path: &Path, task: Task, config: &ExperimentConfig) -> Result<Vec<Observation>> {
    match task {
        Task::Ar1 => {
            let mut countries = ingest_ar1_csv(path)?;
            standardize_covariates(&mut countries);
            Ok(countries.iter().map(Ar1Country::observation).collect())
        }
        Task::Gaussian => ingest_gaussian_csv(path, config.dim, config.points),
    }
}

fn ingest_gaussian_csv(path: &Path, dim: usize, points: usize) -> Result<Vec<Observation>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected: Vec<String> = std::iter::once("observation".to_string())
        .chain((0..dim).map(|d| format!("x{d}")))
        .collect();
    for name in &expected {
        if !headers.iter().any(|h| h.trim() == name) {
            return Err(Error::Data(format!("{}: missing column '{name}'", path.display())));
        }
    }
    let idx: Vec<usize> = expected
        .iter()
        .map(|n| headers.iter().position(|h| h.trim() == n).expect("checked above"))
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let id = rec.get(idx[0]).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("row {line}, column 'observation': missing value")));
        }
        let mut vals = Vec::with_capacity(dim);
        for (k, &c) in idx.iter().enumerate().skip(1) {
            let cell = rec.get(c).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("row {line}, column '{}': invalid number '{cell}'", expected[k])))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {line}, column '{}': non-finite value", expected[k])));
            }
            vals.push(v);
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(vals);
    }
    order
        .into_iter()
        .map(|id| {
            let r = &rows[&id];
            if r.len() != points {
                return Err(Error::Data(format!(
                    "observation '{id}' has {} rows, expected K = {points}",
                    r.len()
                )));
            }
            Ok(Array2::from_shape_fn((points, dim), |(k, d)| r[k][d]))
        })
        .collect()
}

/// Everything one refit needs before training.
pub struct RefitData {
    pub seed: u64,
    pub labeled: LabeledData,
    pub unlabeled: Vec<Observation>,
    pub init: Approximator,
}

/// Evaluation targets with their oracle posteriors.
pub struct EvalSet {
    /// Label for the `mu_obs` column (μ_obs or country name).
    pub labels: Vec<String>,
    pub observations: Vec<Observation>,
    pub oracles: Vec<OracleResult>,
    pub oracle_samples: Vec<Array2<f64>>,
}

fn eval_key(mu: f64) -> u64 {
    mu.to_bits()
}

/// Evaluation observation `x_obs ~ N(μ_obs, 0.01 I)` for one seed.
pub fn gaussian_eval_observation(model: &GaussianModel, seed: u64, mu: f64) -> Observation {
    model.shifted_observation(mu, 0.01, &mut SeedTree::new(seed).stream("eval", &[eval_key(mu)]))
}

pub fn gaussian_refit_data(config: &ExperimentConfig, seed: u64) -> Result<RefitData> {
    let model = config.gaussian_model();
    let tree = SeedTree::new(seed);
    let labeled = LabeledData::simulate(&model, config.n_labeled, &mut tree.stream("labeled", &[]));
    let unlabeled = match &config.unlabeled_csv {
        Some(p) => ingest_unlabeled_csv(p, Task::Gaussian, config)?,
        None => (0..config.unlabeled as u64)
            .map(|m| model.shifted_observation(config.mu_star, 1.0, &mut tree.stream("unlabeled", &[m])))
            .collect(),
    };
    let init = Approximator::new(config.arch_config(), &mut tree.stream("init", &[]))?;
    Ok(RefitData {
        seed,
        labeled,
        unlabeled,
        init,
    })
}

pub fn gaussian_eval_set(config: &ExperimentConfig, seed: u64) -> EvalSet {
    let model = config.gaussian_model();
    let tree = SeedTree::new(seed);
    let mut set = EvalSet {
        labels: Vec::new(),
        observations: Vec::new(),
        oracles: Vec::new(),
        oracle_samples: Vec::new(),
    };
    for &mu in &config.mu_obs {
        let x = gaussian_eval_observation(&model, seed, mu);
        let oracle = gaussian_analytic_posterior(&model, &x);
        let samples = oracle.sample_gaussian(config.eval_samples, &mut tree.stream("oracle", &[eval_key(mu)]));
        set.labels.push(format_number(mu));
        set.observations.push(x);
        set.oracles.push(oracle);
        set.oracle_samples.push(samples);
    }
    set
}

fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Country data: ingested CSV or synthetic countries from the prior.
pub struct Ar1Data {
    pub model: Ar1Model,
    pub countries: Vec<Ar1Country>,
    pub truth: Option<Vec<Vec<f64>>>,
}

pub fn ar1_data(config: &ExperimentConfig) -> Result<Ar1Data> {
    match &config.unlabeled_csv {
        Some(p) => {
            let mut countries = ingest_ar1_csv(p)?;
            standardize_covariates(&mut countries);
            let steps = countries[0].y.len() - 1;
            Ok(Ar1Data {
                model: Ar1Model::new(steps),
                countries,
                truth: None,
            })
        }
        None => {
            let model = Ar1Model::new(config.steps);
            let synth = SyntheticCountries::generate(
                &model,
                config.countries,
                config.first_year,
                &mut SeedTree::new(config.data_seed).stream("countries", &[]),
            );
            Ok(Ar1Data {
                model,
                countries: synth.countries,
                truth: Some(synth.truth),
            })
        }
    }
}

/// MCMC references for every country (fixed across refits).
pub fn ar1_eval_set(config: &ExperimentConfig, data: &Ar1Data) -> Result<EvalSet> {
    let tree = SeedTree::new(config.data_seed);
    let mut set = EvalSet {
        labels: Vec::new(),
        observations: Vec::new(),
        oracles: Vec::new(),
        oracle_samples: Vec::new(),
    };
    for (j, c) in data.countries.iter().enumerate() {
        let x = c.observation();
        let oracle = mh_reference_posterior(&data.model, &x, &config.mh, &mut tree.stream("mh", &[j as u64]))?;
        let samples = oracle.samples.clone().expect("MCMC keeps its samples");
        let samples = resample_rows(&samples, config.eval_samples, &mut tree.stream("resample", &[j as u64]));
        set.labels.push(c.name.clone());
        set.observations.push(x);
        set.oracles.push(oracle);
        set.oracle_samples.push(samples);
    }
    Ok(set)
}

fn resample_rows(samples: &Array2<f64>, n: usize, rng: &mut Rng) -> Array2<f64> {
    use rand::Rng as _;
    if samples.nrows() == n {
        return samples.clone();
    }
    let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..samples.nrows())).collect();
    samples.select(ndarray::Axis(0), &idx)
}

pub fn ar1_refit_data(config: &ExperimentConfig, data: &Ar1Data, seed: u64) -> Result<RefitData> {
    let tree = SeedTree::new(seed);
    let labeled = LabeledData::simulate(&data.model, config.n_labeled, &mut tree.stream("labeled", &[]));
    let unlabeled = data
        .countries
        .iter()
        .take(config.unlabeled)
        .map(Ar1Country::observation)
        .collect();
    let init = Approximator::new(config.arch_config(), &mut tree.stream("init", &[]))?;
    Ok(RefitData {
        seed,
        labeled,
        unlabeled,
        init,
    })
}

pub fn train_method(
    config: &ExperimentConfig,
    data: &RefitData,
    model: &dyn SimModel,
    method: Method,
) -> Result<TrainOutcome> {
    let tc = config.train_config(method, data.seed);
    let unlabeled: &[Observation] = if method == Method::Npe { &[] } else { &data.unlabeled };
    train(&tc, data.init.clone(), &data.labeled, unlabeled, model)
}

/// Posterior draws for every evaluation target, from one shared stream per
/// target so both methods see the same base noise.
pub fn posterior_draws(approx: &Approximator, eval: &EvalSet, n: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    let tree = SeedTree::new(seed);
    eval.observations
        .iter()
        .enumerate()
        .map(|(i, x)| approx.sample_posterior(x, n, &mut tree.stream("posterior", &[i as u64])))
        .collect()
}

pub fn evaluate(
    approx: &Approximator,
    eval: &EvalSet,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<MetricReport>, Vec<Array2<f64>>)> {
    let draws = posterior_draws(approx, eval, config.eval_samples, seed)?;
    let reports = draws
        .iter()
        .zip(eval.oracles.iter().zip(&eval.oracle_samples))
        .map(|(d, (o, s))| MetricReport::compute(d, o, s, config.bandwidth))
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, draws))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub method: String,
    pub seed: u64,
    pub observation: String,
    pub param: String,
    pub q025: f64,
    pub q25: f64,
    pub q75: f64,
    pub q975: f64,
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantile_rows(method: &str, seed: u64, label: &str, names: &[String], samples: &Array2<f64>) -> Vec<QuantileRow> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut col = samples.column(j).to_vec();
            col.sort_by(f64::total_cmp);
            QuantileRow {
                method: method.to_string(),
                seed,
                observation: label.to_string(),
                param: name.clone(),
                q025: quantile_sorted(&col, 0.025),
                q25: quantile_sorted(&col, 0.25),
                q75: quantile_sorted(&col, 0.75),
                q975: quantile_sorted(&col, 0.975),
            }
        })
        .collect()
}

fn metric_rows(
    config: &ExperimentConfig,
    method: &str,
    seed: u64,
    names: &[String],
    eval: &EvalSet,
    reports: &[MetricReport],
) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (label, r) in eval.labels.iter().zip(reports) {
        for (j, name) in names.iter().enumerate() {
            rows.push(MetricRow {
                task: config.task.name().to_string(),
                factor: config.factor.clone(),
                value: config.value.clone(),
                method: method.to_string(),
                seed,
                mu_obs: label.clone(),
                param: name.clone(),
                mean_bias: r.mean_bias[j],
                sd_bias: r.sd_bias[j],
                mmd: r.mmd,
                wasserstein: r.wasserstein[j],
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub checkpoint_format_version: u32,
    pub build: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub complete: bool,
    pub aborted: Vec<String>,
}

pub fn build_id() -> String {
    format!(
        "{} {} ({})",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        if cfg!(debug_assertions) { "debug" } else { "optimized" }
    )
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricRow>,
    pub aborted: Vec<String>,
}

fn run_dir(dir: &Path, seed: u64, method: &str) -> Result<PathBuf> {
    let p = dir.join("runs").join(format!("seed{seed}")).join(method);
    std::fs::create_dir_all(&p)?;
    Ok(p)
}

fn write_manifest(dir: &Path, config: &ExperimentConfig, complete: bool, aborted: &[String]) -> Result<()> {
    let m = Manifest {
        format_version: MANIFEST_VERSION,
        checkpoint_format_version: CHECKPOINT_VERSION,
        build: build_id(),
        config: config.clone(),
        seeds: config.seeds(),
        methods: vec![Method::Npe.name().into(), Method::Sc.name().into(), "oracle".into()],
        complete,
        aborted: aborted.to_vec(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join("manifest.json");
    if !p.exists() {
        return Err(Error::MissingResults(p));
    }
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&p)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::Version {
            found: m.format_version,
            expected: MANIFEST_VERSION,
        });
    }
    Ok(m)
}

/// Runs every refit, writing metrics, logs, checkpoints and interval data
/// under `config.output_dir`. Training aborts do not stop the sweep; they are
/// listed in the summary and the manifest is marked incomplete.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    write_manifest(&dir, config, false, &[])?;

    let (model, eval_fixed, ar1): (Box<dyn SimModel>, Option<EvalSet>, Option<Ar1Data>) = match config.task {
        Task::Gaussian => (Box::new(config.gaussian_model()), None, None),
        Task::Ar1 => {
            let data = ar1_data(config)?;
            let eval = ar1_eval_set(config, &data)?;
            (Box::new(data.model.clone()), Some(eval), Some(data))
        }
    };
    let names = model.param_names();
    let mut rows = Vec::new();
    let mut quantiles = Vec::new();
    let mut aborted = Vec::new();

    for seed in config.seeds() {
        let (data, eval_owned) = match config.task {
            Task::Gaussian => (gaussian_refit_data(config, seed)?, Some(gaussian_eval_set(config, seed))),
            Task::Ar1 => (ar1_refit_data(config, ar1.as_ref().expect("ar1 data"), seed)?, None),
        };
        let eval = eval_owned.as_ref().or(eval_fixed.as_ref()).expect("evaluation set");
        for (label, samples) in eval.labels.iter().zip(&eval.oracle_samples) {
            quantiles.extend(quantile_rows("oracle", seed, label, &names, samples));
        }
        for method in [Method::Npe, Method::Sc] {
            let out = train_method(config, &data, model.as_ref(), method)?;
            let rd = run_dir(&dir, seed, method.name())?;
            out.write_log(&rd.join("train_log.jsonl"))?;
            if let Some(reason) = &out.aborted {
                aborted.push(format!("seed {seed} {}: {reason}", method.name()));
            }
            let snapshot = Snapshot {
                approximator: out.approximator,
                config: config.train_config(method, seed),
            };
            save_checkpoint(&snapshot, &rd.join("checkpoint.json"))?;
            let (reports, draws) = evaluate(&snapshot.approximator, eval, config, seed)?;
            rows.extend(metric_rows(config, method.name(), seed, &names, eval, &reports));
            for (label, d) in eval.labels.iter().zip(&draws) {
                quantiles.extend(quantile_rows(method.name(), seed, label, &names, d));
            }
        }
    }

    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    write_metrics_json(&dir.join("metrics.json"), &rows)?;
    write_quantiles(&dir.join("posterior_quantiles.csv"), &quantiles)?;
    if config.task == Task::Ar1 {
        write_table(&dir.join("table.csv"), &rows, &names)?;
        if let Some(data) = &ar1 {
            crate::model_zoo::write_ar1_csv(&dir.join("countries.csv"), &data.countries)?;
        }
    }
    write_manifest(&dir, config, aborted.is_empty(), &aborted)?;
    Ok(ExperimentSummary { dir, rows, aborted })
}

fn write_quantiles(path: &Path, rows: &[QuantileRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_quantiles(path: &Path) -> Result<Vec<QuantileRow>> {
    if !path.exists() {
        return Err(Error::MissingResults(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub param: String,
    pub mean_bias: f64,
    pub sd_bias: f64,
    pub wasserstein: f64,
}

/// Per-method, per-parameter averages over all countries and refits.
pub fn summarize_table(rows: &[MetricRow], names: &[String]) -> Vec<TableRow> {
    let mut out = Vec::new();
    for method in [Method::Npe.name(), Method::Sc.name()] {
        for name in names {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.method == method && &r.param == name).collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len() as f64;
            out.push(TableRow {
                method: method.to_string(),
                param: name.clone(),
                mean_bias: sel.iter().map(|r| r.mean_bias).sum::<f64>() / n,
                sd_bias: sel.iter().map(|r| r.sd_bias).sum::<f64>() / n,
                wasserstein: sel.iter().map(|r| r.wasserstein).sum::<f64>() / n,
            });
        }
    }
    out
}

fn write_table(path: &Path, rows: &[MetricRow], names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in summarize_table(rows, names) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes plot data for `figure` (`contour` or `forest`) into the results
/// directory and returns the file path.
pub fn generate_figure_data(dir: &Path, figure: &str) -> Result<PathBuf> {
    let manifest = read_manifest(dir)?;
    match figure {
        "forest" => {
            let rows = read_quantiles(&dir.join("posterior_quantiles.csv"))?;
            for r in &rows {
                if !(r.q025 <= r.q25 && r.q25 <= r.q75 && r.q75 <= r.q975) {
                    return Err(Error::Data(format!(
                        "unordered quantiles for {} {} {}",
                        r.method, r.observation, r.param
                    )));
                }
            }
            let out = dir.join("figure_forest.csv");
            write_quantiles(&out, &rows)?;
            Ok(out)
        }
        "contour" => {
            let cfg = &manifest.config;
            if cfg.task != Task::Gaussian || cfg.dim != 2 {
                return Err(Error::Config("contour data needs the Gaussian task with D = 2".into()));
            }
            let seed = *manifest.seeds.first().ok_or_else(|| Error::Data("manifest lists no seeds".into()))?;
            let model = cfg.gaussian_model();
            let mut approx = Vec::new();
            for method in [Method::Npe, Method::Sc] {
                let p = dir.join("runs").join(format!("seed{seed}")).join(method.name()).join("checkpoint.json");
                if !p.exists() {
                    return Err(Error::MissingResults(p));
                }
                approx.push((method.name(), crate::training::load_checkpoint(&p)?.approximator));
            }
            let out = dir.join("figure_contour.csv");
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["method", "mu_obs", "theta0", "theta1", "density"])?;
            for &mu in &cfg.mu_obs {
                let x = gaussian_eval_observation(&model, seed, mu);
                let oracle = gaussian_analytic_posterior(&model, &x);
                let grid = contour_grid(&oracle);
                let analytic: Vec<f64> = grid
                    .rows()
                    .into_iter()
                    .map(|r| oracle.gaussian_log_density(&r.to_vec()).exp())
                    .collect();
                let mut densities = vec![("analytic", analytic)];
                for (name, a) in &approx {
                    densities.push((name, a.log_posterior(&grid, &x)?.mapv(f64::exp).to_vec()));
                }
                for (name, dens) in densities {
                    for (r, d) in grid.rows().into_iter().zip(dens) {
                        w.write_record([
                            name.to_string(),
                            format_number(mu),
                            r[0].to_string(),
                            r[1].to_string(),
                            d.to_string(),
                        ])?;
                    }
                }
            }
            w.flush()?;
            Ok(out)
        }
        other => Err(Error::Config(format!("unknown figure '{other}' (expected contour or forest)"))),
    }
}

/// `CONTOUR_GRID²` points over the oracle mean ± 4 sd in the first two
/// dimensions.
pub fn contour_grid(oracle: &OracleResult) -> Array2<f64> {
    let axis = |d: usize| -> Array1<f64> {
        Array1::linspace(
            oracle.mean[d] - CONTOUR_HALF_WIDTH_SD * oracle.sd[d],
            oracle.mean[d] + CONTOUR_HALF_WIDTH_SD * oracle.sd[d],
            CONTOUR_GRID,
        )
    };
    let (a, b) = (axis(0), axis(1));
    Array2::from_shape_fn((CONTOUR_GRID * CONTOUR_GRID, 2), |(i, j)| {
        if j == 0 {
            a[i / CONTOUR_GRID]
        } else {
            b[i % CONTOUR_GRID]
        }
    })
}
