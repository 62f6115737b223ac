//! Conditional affine coupling flows.
//!
//! The flow maps data `y` to a latent `z` (`forward`) and back (`inverse`).
//! Each coupling layer transforms the coordinates at even positions of the
//! current ordering, `z_a = y_a·exp(s) + t`, with `(s, t)` produced by an MLP
//! conditioner fed with the remaining coordinates and the condition vector.
//! The ordering is reversed after every layer; for odd dimensions it is also
//! rotated by one, since reversal alone keeps odd positions passive forever.
//! Log-scales pass through `clamp·tanh(s/clamp)` so every layer's
//! log-determinant stays in `[-clamp, clamp]` per coordinate.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmath::{Activation, Gradients, Init, Mlp, MlpCache, Mode, ParamStore};
use crate::rng::Rng;
use crate::{Error, Result};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub coupling_layers: usize,
    pub hidden_units: usize,
    /// Hidden layers per conditioner network.
    pub hidden_layers: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub scale_clamp: f64,
    pub transform: TransformKind,
    /// Prepends an elementwise affine layer whose scale and shift depend on
    /// the condition only. The couplings then see `y` standardized by the
    /// condition, which keeps them in range when `y` is far from the training
    /// data but consistent with `c` (useful for likelihood networks).
    #[serde(default)]
    pub leading_affine: bool,
}

impl FlowConfig {
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            coupling_layers: 5,
            hidden_units: 128,
            hidden_layers: 2,
            activation: Activation::Relu,
            dropout: 0.05,
            scale_clamp: 5.0,
            transform: TransformKind::Affine,
            leading_affine: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Coupling {
    active: Vec<usize>,
    passive: Vec<usize>,
    net: Mlp,
}

struct CouplingCache {
    /// Active coordinates before the transform.
    y_active: Array2<f64>,
    /// `tanh(s_raw / clamp)`.
    tanh: Array2<f64>,
    scale: Array2<f64>,
    net: MlpCache,
}

pub struct FlowCache {
    layers: Vec<CouplingCache>,
    /// Latent image of the batch.
    pub z: Array2<f64>,
    pub logdet: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ConditionalFlow {
    config: FlowConfig,
    layers: Vec<Coupling>,
}

impl ConditionalFlow {
    pub fn new(params: &mut ParamStore, name: &str, config: FlowConfig, rng: &mut Rng) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if config.coupling_layers == 0 {
            return Err(Error::Config("flow needs at least one coupling layer".into()));
        }
        if !(config.scale_clamp > 0.0) {
            return Err(Error::Config("scale clamp must be positive".into()));
        }
        let mut order: Vec<usize> = (0..config.dim).collect();
        let mut layers = Vec::with_capacity(config.coupling_layers);
        let widths = vec![config.hidden_units; config.hidden_layers];
        if config.leading_affine {
            let net = Mlp::new(
                params,
                &format!("{name}.affine"),
                config.cond_dim,
                &widths,
                2 * config.dim,
                config.activation,
                Activation::Identity,
                Init::Zero,
                config.dropout,
                rng,
            )?;
            layers.push(Coupling {
                active: order.clone(),
                passive: Vec::new(),
                net,
            });
        }
        for k in 0..config.coupling_layers {
            let active: Vec<usize> = order.iter().step_by(2).copied().collect();
            let passive: Vec<usize> = order.iter().skip(1).step_by(2).copied().collect();
            let net = Mlp::new(
                params,
                &format!("{name}.coupling{k}"),
                passive.len() + config.cond_dim,
                &widths,
                2 * active.len(),
                config.activation,
                Activation::Identity,
                Init::Zero,
                config.dropout,
                rng,
            )?;
            layers.push(Coupling {
                active,
                passive,
                net,
            });
            order.reverse();
            if config.dim % 2 == 1 {
                order.rotate_left(1);
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn check(&self, y: &Array2<f64>, c: &Array2<f64>) -> Result<()> {
        if y.ncols() != self.config.dim || c.ncols() != self.config.cond_dim || y.nrows() != c.nrows() {
            return Err(Error::Config(format!(
                "flow expects ({}, {}) columns, got ({}, {}) with {} and {} rows",
                self.config.dim,
                self.config.cond_dim,
                y.ncols(),
                c.ncols(),
                y.nrows(),
                c.nrows()
            )));
        }
        if !y.iter().chain(c.iter()).all(|v| v.is_finite()) {
            return Err(Error::numerical("flow.forward", "non-finite input"));
        }
        Ok(())
    }

    fn conditioner_input(layer: &Coupling, y: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
        let passive = y.select(Axis(1), &layer.passive);
        concatenate(Axis(1), &[passive.view(), c.view()]).expect("conditioner input")
    }

    /// Splits raw conditioner output into clamped log-scale (and its tanh) and shift.
    fn scale_shift(&self, raw: &Array2<f64>, na: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let clamp = self.config.scale_clamp;
        let tanh = raw.slice(s![.., ..na]).mapv(|v| (v / clamp).tanh());
        let scale = &tanh * clamp;
        let shift = raw.slice(s![.., na..]).to_owned();
        (tanh, scale, shift)
    }

    /// Batch forward pass `y → z` with caches for [`Self::backward`].
    pub fn forward_train(
        &self,
        params: &ParamStore,
        y: &Array2<f64>,
        c: &Array2<f64>,
        mode: &mut Mode<'_>,
    ) -> Result<FlowCache> {
        self.check(y, c)?;
        let mut cur = y.clone();
        let mut logdet = Array1::zeros(y.nrows());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = Self::conditioner_input(layer, &cur, c);
            let (raw, net_cache) = layer.net.forward(params, input, mode)?;
            let na = layer.active.len();
            let (tanh, scale, shift) = self.scale_shift(&raw, na);
            let y_active = cur.select(Axis(1), &layer.active);
            for (j, &a) in layer.active.iter().enumerate() {
                let col = &y_active.column(j) * &scale.column(j).mapv(f64::exp) + shift.column(j);
                cur.column_mut(a).assign(&col);
            }
            logdet += &scale.sum_axis(Axis(1));
            caches.push(CouplingCache {
                y_active,
                tanh,
                scale,
                net: net_cache,
            });
        }
        Ok(FlowCache {
            layers: caches,
            z: cur,
            logdet,
        })
    }

    /// Batch forward pass without caches or dropout.
    pub fn forward_batch(
        &self,
        params: &ParamStore,
        y: &Array2<f64>,
        c: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check(y, c)?;
        let mut cur = y.clone();
        let mut logdet = Array1::zeros(y.nrows());
        for layer in &self.layers {
            let input = Self::conditioner_input(layer, &cur, c);
            let raw = layer.net.forward_eval(params, &input);
            let (_, scale, shift) = self.scale_shift(&raw, layer.active.len());
            for (j, &a) in layer.active.iter().enumerate() {
                let col = &cur.column(a) * &scale.column(j).mapv(f64::exp) + shift.column(j);
                cur.column_mut(a).assign(&col);
            }
            logdet += &scale.sum_axis(Axis(1));
        }
        Ok((cur, logdet))
    }

    /// Batch inverse `z → y`. Returns `y` and the log-determinant of the
    /// inverse map at `z` (the negative of the forward log-determinant at `y`).
    pub fn inverse_batch(
        &self,
        params: &ParamStore,
        z: &Array2<f64>,
        c: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check(z, c)?;
        let mut cur = z.clone();
        let mut logdet = Array1::zeros(z.nrows());
        for layer in self.layers.iter().rev() {
            let input = Self::conditioner_input(layer, &cur, c);
            let raw = layer.net.forward_eval(params, &input);
            let (_, scale, shift) = self.scale_shift(&raw, layer.active.len());
            for (j, &a) in layer.active.iter().enumerate() {
                let col = (&cur.column(a) - &shift.column(j)) * scale.column(j).mapv(|v| (-v).exp());
                cur.column_mut(a).assign(&col);
            }
            logdet -= &scale.sum_axis(Axis(1));
        }
        Ok((cur, logdet))
    }

    /// Backpropagates `grad_z` (∂L/∂z) and `grad_logdet` (∂L/∂logdet) through
    /// the cached pass. Parameter gradients are accumulated into `grads`;
    /// returns `(∂L/∂y, ∂L/∂c)`.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &FlowCache,
        grad_z: Array2<f64>,
        grad_logdet: &Array1<f64>,
        grads: &mut Gradients,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut g = grad_z;
        let mut gc = Array2::zeros((g.nrows(), self.config.cond_dim));
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let na = layer.active.len();
            let np = layer.passive.len();
            let mut g_raw = Array2::zeros((g.nrows(), 2 * na));
            for (j, &a) in layer.active.iter().enumerate() {
                let exp_s = lc.scale.column(j).mapv(f64::exp);
                let g_out = g.column(a).to_owned();
                let g_s = &g_out * &exp_s * lc.y_active.column(j) + grad_logdet;
                let dtanh = lc.tanh.column(j).mapv(|t| 1.0 - t * t);
                g_raw.column_mut(j).assign(&(g_s * dtanh));
                g_raw.column_mut(na + j).assign(&g_out);
                g.column_mut(a).assign(&(g_out * exp_s));
            }
            let g_in = layer.net.backward(params, &lc.net, g_raw, grads);
            for (j, &p) in layer.passive.iter().enumerate() {
                let mut col = g.column_mut(p);
                col += &g_in.column(j);
            }
            gc += &g_in.slice(s![.., np..]);
        }
        (g, gc)
    }

    /// Standard-normal base log-density plus log-determinant, per row.
    pub fn log_prob_batch(&self, params: &ParamStore, y: &Array2<f64>, c: &Array2<f64>) -> Result<Array1<f64>> {
        let (z, logdet) = self.forward_batch(params, y, c)?;
        Ok(base_log_prob(&z) + logdet)
    }

    /// Log-density with caches. Use [`Self::log_prob_backward`] with per-row
    /// weights `∂L/∂log q` to backpropagate.
    pub fn log_prob_train(
        &self,
        params: &ParamStore,
        y: &Array2<f64>,
        c: &Array2<f64>,
        mode: &mut Mode<'_>,
    ) -> Result<(Array1<f64>, FlowCache)> {
        let cache = self.forward_train(params, y, c, mode)?;
        let lp = base_log_prob(&cache.z) + &cache.logdet;
        Ok((lp, cache))
    }

    pub fn log_prob_backward(
        &self,
        params: &ParamStore,
        cache: &FlowCache,
        weights: &Array1<f64>,
        grads: &mut Gradients,
    ) -> (Array2<f64>, Array2<f64>) {
        let mut gz = cache.z.mapv(|v| -v);
        for (mut row, w) in gz.rows_mut().into_iter().zip(weights) {
            row *= *w;
        }
        self.backward(params, cache, gz, weights, grads)
    }

    pub fn forward(&self, params: &ParamStore, y: &[f64], c: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.forward_batch(params, &row(y), &row(c))?;
        Ok((z.row(0).to_vec(), ld[0]))
    }

    pub fn inverse(&self, params: &ParamStore, z: &[f64], c: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (y, ld) = self.inverse_batch(params, &row(z), &row(c))?;
        Ok((y.row(0).to_vec(), ld[0]))
    }

    pub fn log_prob(&self, params: &ParamStore, y: &[f64], c: &[f64]) -> Result<f64> {
        Ok(self.log_prob_batch(params, &row(y), &row(c))?[0])
    }

    /// `n` draws from `q(·|c)`: standard-normal latents pushed through the inverse.
    pub fn sample(&self, params: &ParamStore, n: usize, c: &[f64], rng: &mut Rng) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::Input("sample count must be at least 1".into()));
        }
        let cond = Array2::from_shape_fn((n, c.len()), |(_, j)| c[j]);
        self.sample_batch(params, &cond, rng)
    }

    /// One draw per condition row.
    pub fn sample_batch(&self, params: &ParamStore, c: &Array2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        let z = standard_normal((c.nrows(), self.config.dim), rng);
        Ok(self.inverse_batch(params, &z, c)?.0)
    }
}

pub fn base_log_prob(z: &Array2<f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    z.map_axis(Axis(1), |r| -0.5 * r.dot(&r) - 0.5 * d * LOG_2PI)
}

pub fn standard_normal(shape: (usize, usize), rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{compute_gradient, finite_difference_gradient, gradient_check_ratio};
    use crate::rng::SeedTree;
    use rand::Rng as _;

    fn random_flow(dim: usize, cond: usize, layers: usize, seed: u64) -> (ConditionalFlow, ParamStore) {
        let mut params = ParamStore::new();
        let mut rng = SeedTree::new(seed).stream("init", &[]);
        let cfg = FlowConfig {
            coupling_layers: layers,
            hidden_units: 8,
            dropout: 0.0,
            ..FlowConfig::new(dim, cond)
        };
        let flow = ConditionalFlow::new(&mut params, "f", cfg, &mut rng).unwrap();
        // Perturb the zero-initialised output layers so the map is non-trivial.
        for v in params.values_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        (flow, params)
    }

    #[test]
    fn every_coordinate_is_transformed() {
        for dim in 1..=7 {
            let (flow, _) = random_flow(dim, 1, 3, 0);
            let mut seen = vec![false; dim];
            for layer in &flow.layers {
                layer.active.iter().for_each(|&a| seen[a] = true);
            }
            assert!(seen.iter().all(|&s| s), "dim {dim}: {seen:?}");
        }
    }

    #[test]
    fn identity_at_init() {
        let mut params = ParamStore::new();
        let mut rng = SeedTree::new(0).stream("init", &[]);
        let flow = ConditionalFlow::new(&mut params, "f", FlowConfig::new(3, 2), &mut rng).unwrap();
        let (z, ld) = flow.forward(&params, &[0.5, -1.0, 2.0], &[3.0, 1.0]).unwrap();
        assert_eq!(z, vec![0.5, -1.0, 2.0]);
        assert_eq!(ld, 0.0);

        let mut p1 = ParamStore::new();
        let f1 = ConditionalFlow::new(&mut p1, "f", FlowConfig::new(1, 1), &mut rng).unwrap();
        assert!((f1.log_prob(&p1, &[0.0], &[0.3]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let mut p2 = ParamStore::new();
        let f2 = ConditionalFlow::new(&mut p2, "f", FlowConfig::new(2, 1), &mut rng).unwrap();
        assert!((f2.log_prob(&p2, &[0.0, 0.0], &[0.3]).unwrap() + LOG_2PI).abs() < 1e-12);
    }

    #[test]
    fn single_coupling_logdet_is_scale() {
        let mut params = ParamStore::new();
        let mut rng = SeedTree::new(0).stream("init", &[]);
        let cfg = FlowConfig {
            coupling_layers: 1,
            hidden_units: 4,
            ..FlowConfig::new(1, 1)
        };
        let flow = ConditionalFlow::new(&mut params, "f", cfg, &mut rng).unwrap();
        // Output bias holds (s_raw, t); a raw log-scale of 0.7 gives 5·tanh(0.14).
        let bias = params.find("f.coupling0.out.bias").unwrap();
        params.slice_mut(bias)[0] = 0.7;
        let s = 5.0 * (0.7f64 / 5.0).tanh();
        let (z, ld) = flow.forward(&params, &[2.0], &[0.0]).unwrap();
        assert!((ld - s).abs() < 1e-15);
        assert!((z[0] - 2.0 * s.exp()).abs() < 1e-12);
    }

    #[test]
    fn inverse_logdet_negates_forward() {
        let (flow, params) = random_flow(3, 2, 2, 5);
        let mut rng = SeedTree::new(9).stream("y", &[]);
        for _ in 0..50 {
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let c: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (z, ld) = flow.forward(&params, &y, &c).unwrap();
            let (y2, ld_inv) = flow.inverse(&params, &z, &c).unwrap();
            assert!((ld + ld_inv).abs() < 1e-8);
            for (a, b) in y.iter().zip(&y2) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (flow, params) = random_flow(2, 1, 1, 1);
        assert!(matches!(
            flow.forward(&params, &[f64::NAN, 0.0], &[0.0]),
            Err(Error::Numerical { .. })
        ));
        assert!(matches!(flow.forward(&params, &[0.0], &[0.0]), Err(Error::Config(_))));
        let mut rng = SeedTree::new(1).stream("s", &[]);
        assert!(flow.sample(&params, 0, &[0.0], &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let (flow, params) = random_flow(2, 1, 2, 3);
        let tree = SeedTree::new(4);
        let a = flow.sample(&params, 10, &[0.5], &mut tree.stream("s", &[1])).unwrap();
        let b = flow.sample(&params, 10, &[0.5], &mut tree.stream("s", &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_flow_samples_standard_normal() {
        let mut params = ParamStore::new();
        let mut rng = SeedTree::new(0).stream("init", &[]);
        let flow = ConditionalFlow::new(&mut params, "f", FlowConfig::new(2, 1), &mut rng).unwrap();
        let n = 20_000;
        let x = flow.sample(&params, n, &[1.0], &mut rng).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for m in mean.iter() {
            assert!(m.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    fn nll(flow: &ConditionalFlow, params: &ParamStore, y: &Array2<f64>, c: &Array2<f64>) -> f64 {
        -flow.log_prob_batch(params, y, c).unwrap().mean().unwrap()
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        for (dim, layers) in [(1, 1), (2, 2), (3, 2)] {
            let (flow, params) = random_flow(dim, 2, layers, 11 + dim as u64);
            let mut rng = SeedTree::new(2).stream("data", &[]);
            let y = Array2::from_shape_simple_fn((4, dim), || rng.gen_range(-2.0..2.0));
            let c = Array2::from_shape_simple_fn((4, 2), || rng.gen_range(-2.0..2.0));
            let (_, grads) = compute_gradient(&params, |ps, gr| {
                let (lp, cache) = flow.log_prob_train(ps, &y, &c, &mut Mode::Eval)?;
                let w = Array1::from_elem(lp.len(), -1.0 / lp.len() as f64);
                flow.log_prob_backward(ps, &cache, &w, gr);
                Ok(-lp.mean().unwrap())
            })
            .unwrap();
            let fd = finite_difference_gradient(&params, 1e-5, |ps| nll(&flow, ps, &y, &c));
            let ratio = gradient_check_ratio(grads.values(), &fd, 1e-4, 1e-7);
            assert!(ratio <= 1.0, "dim {dim}: ratio {ratio}");
        }
    }

    #[test]
    fn input_and_condition_gradients_match_finite_differences() {
        let (flow, params) = random_flow(3, 2, 2, 21);
        let y = Array2::from_shape_vec((1, 3), vec![0.3, -0.8, 1.1]).unwrap();
        let c = Array2::from_shape_vec((1, 2), vec![-0.4, 0.9]).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        let (_, cache) = flow.log_prob_train(&params, &y, &c, &mut Mode::Eval).unwrap();
        let (gy, gc) = flow.log_prob_backward(&params, &cache, &Array1::from_elem(1, 1.0), &mut grads);
        let h = 1e-5;
        let lp = |y: &Array2<f64>, c: &Array2<f64>| flow.log_prob_batch(&params, y, c).unwrap()[0];
        for j in 0..3 {
            let (mut up, mut dn) = (y.clone(), y.clone());
            up[[0, j]] += h;
            dn[[0, j]] -= h;
            let fd = (lp(&up, &c) - lp(&dn, &c)) / (2.0 * h);
            assert!((fd - gy[[0, j]]).abs() <= 1e-4 * fd.abs().max(gy[[0, j]].abs()) + 1e-7);
        }
        for j in 0..2 {
            let (mut up, mut dn) = (c.clone(), c.clone());
            up[[0, j]] += h;
            dn[[0, j]] -= h;
            let fd = (lp(&y, &up) - lp(&y, &dn)) / (2.0 * h);
            assert!((fd - gc[[0, j]]).abs() <= 1e-4 * fd.abs().max(gc[[0, j]].abs()) + 1e-7);
        }
    }

    #[test]
    fn leading_affine_layer_inverts_and_differentiates() {
        let mut params = ParamStore::new();
        let mut rng = SeedTree::new(31).stream("init", &[]);
        let cfg = FlowConfig {
            coupling_layers: 2,
            hidden_units: 8,
            dropout: 0.0,
            leading_affine: true,
            ..FlowConfig::new(3, 2)
        };
        let flow = ConditionalFlow::new(&mut params, "f", cfg, &mut rng).unwrap();
        assert!(params.find("f.affine.out.bias").is_some());
        for v in params.values_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let y = Array2::from_shape_simple_fn((5, 3), || rng.gen_range(-2.0..2.0));
        let c = Array2::from_shape_simple_fn((5, 2), || rng.gen_range(-2.0..2.0));
        let (z, _) = flow.forward_batch(&params, &y, &c).unwrap();
        let (back, _) = flow.inverse_batch(&params, &z, &c).unwrap();
        assert!((&back - &y).iter().all(|d| d.abs() < 1e-10));
        let (_, grads) = compute_gradient(&params, |ps, gr| {
            let (lp, cache) = flow.log_prob_train(ps, &y, &c, &mut Mode::Eval)?;
            let w = Array1::from_elem(lp.len(), -1.0 / lp.len() as f64);
            flow.log_prob_backward(ps, &cache, &w, gr);
            Ok(-lp.mean().unwrap())
        })
        .unwrap();
        let fd = finite_difference_gradient(&params, 1e-5, |ps| nll(&flow, ps, &y, &c));
        assert!(gradient_check_ratio(grads.values(), &fd, 1e-4, 1e-7) <= 1.0);
    }
}
