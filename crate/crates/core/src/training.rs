//! Adam, the epoch/batch loop, training logs and checkpoints.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::approximator::{Approximator, ArchConfig};
use crate::diffmath::{Gradients, ParamKind, ParamStore};
use crate::losses::{semi_supervised_loss, LikelihoodMode, LossBreakdown, LossSettings, ProposalKind};
use crate::model_zoo::SimModel;
use crate::rng::SeedTree;
use crate::summary::Observation;
use crate::{hexfloat, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    5e-4
}
fn default_lambda() -> f64 {
    1.0
}
fn default_l() -> usize {
    32
}
fn default_gamma() -> f64 {
    1e-3
}
fn default_dropout() -> f64 {
    0.05
}
fn default_clip() -> f64 {
    10.0
}
fn default_proposal() -> ProposalKind {
    ProposalKind::CurrentPosterior
}
fn default_likelihood_mode() -> LikelihoodMode {
    LikelihoodMode::Known
}

/// Training hyperparameters. Architecture choices live in [`ArchConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Linear ramp of λ from 0 over this many epochs; 0 disables the ramp.
    #[serde(default)]
    pub lambda_warmup_epochs: usize,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "default_gamma")]
    pub gamma_l2: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_proposal")]
    pub proposal: ProposalKind,
    #[serde(default = "default_likelihood_mode")]
    pub likelihood_mode: LikelihoodMode,
    /// Unlabeled observations per iteration; `None` uses all of them.
    #[serde(default)]
    pub unlabeled_batch: Option<usize>,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Multiplicative learning-rate decay per epoch (1 = constant).
    #[serde(default)]
    pub lr_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.lambda > 0.0 && self.l < 2 {
            return Err(Error::Config(format!("L must be at least 2, got {}", self.l)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.gamma_l2 < 0.0 || !(self.clip_norm > 0.0) {
            return Err(Error::Config("gamma_l2 must be ≥ 0 and clip_norm > 0".into()));
        }
        if self.unlabeled_batch == Some(0) {
            return Err(Error::Config("unlabeled_batch must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if self.lambda_warmup_epochs == 0 {
            self.lambda
        } else {
            self.lambda * ((epoch + 1) as f64 / self.lambda_warmup_epochs as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let n = params.total_dim();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn parameter_at(params: &ParamStore, flat: usize) -> String {
    let mut offset = 0;
    for e in params.entries() {
        if flat < offset + e.len() {
            return format!("{}[{}]", e.name, flat - offset);
        }
        offset += e.len();
    }
    format!("#{flat}")
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.values().len() != params.total_dim() || state.m.len() != params.total_dim() {
        return Err(Error::Input("gradient, state and parameter sizes differ".into()));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::numerical(
            "adam_step",
            format!("non-finite gradient for {}", parameter_at(params, i)),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (((p, g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

/// Simulated `(θ, x)` pairs in the layout the losses consume.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub thetas: Array2<f64>,
    pub observations: Vec<Observation>,
}

impl LabeledData {
    pub fn simulate(model: &dyn SimModel, n: usize, rng: &mut crate::rng::Rng) -> Self {
        Self::from_pairs(crate::model_zoo::simulate_pairs(model, n, rng), model.param_dim())
    }

    pub fn from_pairs(pairs: Vec<(Vec<f64>, Observation)>, dim: usize) -> Self {
        let n = pairs.len();
        let mut thetas = Array2::zeros((n, dim));
        let mut observations = Vec::with_capacity(n);
        for (i, (t, x)) in pairs.into_iter().enumerate() {
            thetas.row_mut(i).assign(&ndarray::Array1::from(t));
            observations.push(x);
        }
        Self { thetas, observations }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub clip_events: usize,
    pub grad_norm_max: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub approximator: Approximator,
    pub log: Vec<EpochRecord>,
    /// Set when training stopped on a numerical failure; `approximator` then
    /// holds the parameters from the last successful step.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.log_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Trains `approx` in place of its current parameters.
pub fn train(
    config: &TrainConfig,
    mut approx: Approximator,
    labeled: &LabeledData,
    unlabeled: &[Observation],
    model: &dyn SimModel,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Input("training needs at least one labeled pair".into()));
    }
    if config.likelihood_mode == LikelihoodMode::Estimated && approx.likelihood.is_none() {
        return Err(Error::Config("estimated likelihood mode needs a likelihood network".into()));
    }
    let seeds = SeedTree::new(config.seed);
    let mut adam = AdamState::new(&approx.params);
    let mut grads = Gradients::zeros_like(&approx.params);
    let mut log = Vec::with_capacity(config.epochs);
    let n = labeled.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = config.learning_rate;

    for epoch in 0..config.epochs {
        let e = epoch as u64;
        order.sort_unstable();
        order.shuffle(&mut seeds.stream("shuffle", &[e]));
        let lambda = config.lambda_at(epoch);
        let settings = LossSettings {
            lambda,
            l: config.l,
            gamma_l2: config.gamma_l2,
            proposal: config.proposal,
            likelihood_mode: config.likelihood_mode,
        };
        let (mut nll, mut sc, mut l2) = (0.0, 0.0, 0.0);
        let mut clip_events = 0;
        let mut grad_norm_max: f64 = 0.0;
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let key = [e, b as u64];
            let thetas = labeled.thetas.select(Axis(0), idx);
            let obs: Vec<&Observation> = idx.iter().map(|&i| &labeled.observations[i]).collect();
            let unl: Vec<&Observation> = if lambda == 0.0 {
                Vec::new()
            } else {
                match config.unlabeled_batch {
                    Some(k) if k < unlabeled.len() => {
                        rand::seq::index::sample(&mut seeds.stream("unlabeled", &key), unlabeled.len(), k)
                            .into_iter()
                            .map(|i| &unlabeled[i])
                            .collect()
                    }
                    _ => unlabeled.iter().collect(),
                }
            };
            grads.zero();
            let step = semi_supervised_loss(
                &approx,
                &approx.params,
                model,
                &thetas,
                &obs,
                &unl,
                &settings,
                &mut seeds.stream("dropout", &key),
                &mut seeds.stream("proposal", &key),
                &mut grads,
            )
            .and_then(|breakdown| {
                let norm = grads.global_norm();
                if !norm.is_finite() {
                    return Err(Error::numerical("train", "non-finite gradient norm"));
                }
                grad_norm_max = grad_norm_max.max(norm);
                if norm > config.clip_norm {
                    grads.scale(config.clip_norm / norm);
                    clip_events += 1;
                }
                let backup = approx.params.clone();
                let adam_backup = adam.clone();
                adam_step(&mut approx.params, &grads, &mut adam, lr)?;
                if !approx.params.all_finite() {
                    approx.params = backup;
                    adam = adam_backup;
                    return Err(Error::numerical("adam_step", "parameters became non-finite"));
                }
                Ok(breakdown)
            });
            match step {
                Ok(bd) => {
                    nll += bd.nll;
                    sc += bd.sc;
                    l2 += bd.l2;
                }
                Err(err @ Error::Numerical { .. }) => {
                    return Ok(TrainOutcome {
                        approximator: approx,
                        log,
                        aborted: Some(format!("epoch {epoch} batch {b}: {err}")),
                    });
                }
                Err(err) => return Err(err),
            }
        }
        let k = batches.len() as f64;
        log.push(EpochRecord {
            epoch,
            iterations: batches.len(),
            loss: LossBreakdown::new(nll / k, sc / k, l2 / k, lambda),
            clip_events,
            grad_norm_max,
        });
        if let Some(decay) = config.lr_decay {
            lr *= decay;
        }
    }
    Ok(TrainOutcome {
        approximator: approx,
        log,
        aborted: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    seed: u64,
    config: TrainConfig,
    arch: ArchConfig,
    params: Vec<StoredParam>,
}

/// A trained approximator plus the configuration that produced it.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub approximator: Approximator,
    pub config: TrainConfig,
}

pub fn save_checkpoint(snapshot: &Snapshot, path: &Path) -> Result<()> {
    let ps = &snapshot.approximator.params;
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        seed: snapshot.config.seed,
        config: snapshot.config.clone(),
        arch: snapshot.approximator.arch.clone(),
        params: ps
            .entries()
            .iter()
            .map(|e| StoredParam {
                name: e.name.clone(),
                shape: e.shape.clone(),
                kind: e.kind,
                values: ps.entry_values(e).iter().map(|&v| hexfloat::format(v)).collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Snapshot> {
    let text = std::fs::read_to_string(path)?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse(format!("{}: missing format_version", path.display())))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile =
        serde_json::from_value(raw).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut params = ParamStore::new();
    for p in file.params {
        let values = p.values.iter().map(|s| hexfloat::parse(s)).collect::<Result<Vec<_>>>()?;
        params
            .register(p.name, &p.shape, p.kind, values)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    if file.seed != file.config.seed {
        return Err(Error::Parse("checkpoint seed disagrees with config echo".into()));
    }
    Ok(Snapshot {
        approximator: Approximator::with_params(file.arch, params)?,
        config: file.config,
    })
}
