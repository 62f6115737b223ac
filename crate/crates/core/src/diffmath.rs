//! Minimal differentiable kernel.
//!
//! Parameters live in one flat `f64` buffer ([`ParamStore`]); gradients use the
//! same layout ([`Gradients`]). Each composite block (dense layer, MLP,
//! coupling, LSTM, loss) records what it needs during the forward pass in a
//! cache struct and has a hand-written backward rule that accumulates into a
//! [`Gradients`] buffer and returns the gradient with respect to its input.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Handle to one named array in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub index: usize,
    offset: usize,
    rows: usize,
    cols: usize,
}

impl ParamId {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat, named collection of parameter arrays. Names are unique and shapes
/// never change after registration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a matrix (`shape = [rows, cols]`) or vector (`shape = [n]`).
    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        kind: ParamKind,
        init: Vec<f64>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let (rows, cols) = match shape {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Config(format!(
                    "parameter '{name}' must be 1-D or 2-D, got shape {shape:?}"
                )))
            }
        };
        if init.len() != rows * cols {
            return Err(Error::Config(format!(
                "parameter '{name}' expects {} values, got {}",
                rows * cols,
                init.len()
            )));
        }
        let offset = self.values.len();
        let index = self.entries.len();
        self.values.extend(init);
        self.by_name.insert(name.clone(), index);
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            kind,
            offset,
        });
        Ok(ParamId {
            index,
            offset,
            rows,
            cols,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        let e = &self.entries[*self.by_name.get(name)?];
        Some(&self.values[e.offset..e.offset + e.len()])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        let index = *self.by_name.get(name)?;
        let e = &self.entries[index];
        let (rows, cols) = match e.shape[..] {
            [n] => (n, 1),
            [r, c] => (r, c),
            _ => unreachable!("shapes are validated on registration"),
        };
        Some(ParamId {
            index,
            offset: e.offset,
            rows,
            cols,
        })
    }

    pub fn entry_values(&self, entry: &ParamEntry) -> &[f64] {
        &self.values[entry.offset..entry.offset + entry.len()]
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        &self.values[id.range()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.range()]
    }

    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((id.rows, id.cols), self.slice(id)).expect("param shape")
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(id))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// True when `other` has the same names, shapes and kinds in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.kind == b.kind)
    }
}

/// Gradient buffer with the layout of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            values: vec![0.0; params.total_dim()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        &self.values[id.range()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.range()]
    }

    pub fn matrix_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let (r, c) = (id.rows, id.cols);
        ArrayViewMut2::from_shape((r, c), self.slice_mut(id)).expect("grad shape")
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a = apply(z)`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Training mode carries the dropout stream; evaluation disables dropout.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// `activation(W·input + b)` for a single vector, `W` of shape `out × in`.
pub fn dense_forward(
    input: &[f64],
    weights: ArrayView2<'_, f64>,
    bias: &[f64],
    activation: Activation,
) -> Result<Vec<f64>> {
    if weights.ncols() != input.len() || weights.nrows() != bias.len() {
        return Err(Error::Config(format!(
            "dense layer shape mismatch: W is {}x{}, input {}, bias {}",
            weights.nrows(),
            weights.ncols(),
            input.len(),
            bias.len()
        )));
    }
    let x = ArrayView1::from(input);
    Ok(weights
        .dot(&x)
        .iter()
        .zip(bias)
        .map(|(z, b)| activation.apply(z + b))
        .collect())
}

/// Inverted dropout mask: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// `gamma · Σ w²` over weight matrices; biases are excluded.
pub fn l2_penalty(params: &ParamStore, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    let sum: f64 = params
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Weight)
        .map(|e| params.entry_values(e).iter().map(|w| w * w).sum::<f64>())
        .sum();
    gamma * sum
}

pub fn l2_penalty_backward(params: &ParamStore, gamma: f64, grads: &mut Gradients) {
    if gamma == 0.0 {
        return;
    }
    for e in params.entries().iter().filter(|e| e.kind == ParamKind::Weight) {
        let range = e.offset..e.offset + e.len();
        for (g, w) in grads.values[range.clone()].iter_mut().zip(&params.values[range]) {
            *g += 2.0 * gamma * w;
        }
    }
}

/// Runs `loss` (which must accumulate its own gradient into the buffer) and
/// returns the loss value and gradient map. Fails on a non-finite loss.
pub fn compute_gradient<F>(params: &ParamStore, loss: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&ParamStore, &mut Gradients) -> Result<f64>,
{
    let mut grads = Gradients::zeros_like(params);
    let value = loss(params, &mut grads)?;
    if !value.is_finite() {
        return Err(Error::numerical("loss", format!("non-finite loss value {value}")));
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        let name = params
            .entries()
            .iter()
            .find(|e| (e.offset..e.offset + e.len()).contains(&i))
            .map(|e| e.name.clone())
            .unwrap_or_default();
        return Err(Error::numerical("backward", format!("non-finite gradient in '{name}'")));
    }
    Ok((value, grads))
}

/// Central finite-difference gradient of `f` with respect to every scalar
/// parameter. This is the independent oracle for the backward rules.
pub fn finite_difference_gradient<F>(params: &ParamStore, step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = params.clone();
    (0..params.total_dim())
        .map(|i| {
            let orig = probe.values[i];
            probe.values[i] = orig + step;
            let up = f(&probe);
            probe.values[i] = orig - step;
            let down = f(&probe);
            probe.values[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Worst-case `|a-b| / (rel·max(|a|,|b|) + abs)` over all entries; a value
/// ≤ 1 means every entry is within the relative tolerance or the absolute floor.
pub fn gradient_check_ratio(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (rel * a.abs().max(n.abs()) + abs))
        .fold(0.0, f64::max)
}

/// He-style uniform initialisation, scaled by fan-in.
pub fn he_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let bound = (6.0 / cols.max(1) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    He,
    Zero,
}

/// Fully connected layer `activation(x·Wᵀ + b)` over a batch of rows.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

pub struct DenseCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
}

impl Dense {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = match init {
            Init::He => he_uniform(out_dim, in_dim, rng),
            Init::Zero => vec![0.0; out_dim * in_dim],
        };
        let weight = params.register(
            format!("{name}.weight"),
            &[out_dim, in_dim],
            ParamKind::Weight,
            w,
        )?;
        let bias = params.register(
            format!("{name}.bias"),
            &[out_dim],
            ParamKind::Bias,
            vec![0.0; out_dim],
        )?;
        Ok(Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, params: &ParamStore, input: Array2<f64>) -> (Array2<f64>, DenseCache) {
        debug_assert_eq!(input.ncols(), self.in_dim);
        let mut pre = input.dot(&params.matrix(self.weight).t());
        pre += &params.vector(self.bias);
        let act = self.activation;
        let output = pre.mapv(|z| act.apply(z));
        (
            output.clone(),
            DenseCache { input, pre, output },
        )
    }

    pub fn forward_eval(&self, params: &ParamStore, input: &Array2<f64>) -> Array2<f64> {
        let mut pre = input.dot(&params.matrix(self.weight).t());
        pre += &params.vector(self.bias);
        let act = self.activation;
        pre.mapv_inplace(|z| act.apply(z));
        pre
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &DenseCache,
        grad_out: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let act = self.activation;
        let mut g_pre = grad_out.clone();
        if act != Activation::Identity {
            ndarray::Zip::from(&mut g_pre)
                .and(&cache.pre)
                .and(&cache.output)
                .for_each(|g, &z, &a| *g *= act.derivative(z, a));
        }
        {
            let mut gw = grads.matrix_mut(self.weight);
            ndarray::linalg::general_mat_mul(1.0, &g_pre.t(), &cache.input, 1.0, &mut gw);
        }
        let gb = grads.slice_mut(self.bias);
        for row in g_pre.rows() {
            for (b, g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
        g_pre.dot(&params.matrix(self.weight))
    }
}

/// Stack of dense layers. Hidden layers get dropout in training mode; the
/// output layer does not.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

pub struct MlpCache {
    layers: Vec<DenseCache>,
    masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    /// `widths` lists hidden widths; the last layer maps to `out_dim` with
    /// `out_activation` and initialisation `out_init`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        in_dim: usize,
        widths: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        out_activation: Activation,
        out_init: Init,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut layers = Vec::with_capacity(widths.len() + 1);
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Dense::new(
                params,
                &format!("{name}.dense{i}"),
                prev,
                w,
                hidden_activation,
                Init::He,
                rng,
            )?);
            prev = w;
        }
        layers.push(Dense::new(
            params,
            &format!("{name}.out"),
            prev,
            out_dim,
            out_activation,
            out_init,
            rng,
        )?);
        Ok(Self { layers, dropout })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim
    }

    pub fn forward(
        &self,
        params: &ParamStore,
        input: Array2<f64>,
        mode: &mut Mode<'_>,
    ) -> Result<(Array2<f64>, MlpCache)> {
        let last = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (mut out, cache) = layer.forward(params, h);
            caches.push(cache);
            let mask = match mode {
                Mode::Train(rng) if i < last && self.dropout > 0.0 => {
                    let m = dropout_mask(out.len(), self.dropout, rng)?;
                    let m = Array2::from_shape_vec(out.raw_dim(), m).expect("mask shape");
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            h = out;
        }
        Ok((
            h,
            MlpCache {
                layers: caches,
                masks,
            },
        ))
    }

    /// Forward pass without dropout or caching.
    pub fn forward_eval(&self, params: &ParamStore, input: &Array2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward_eval(params, input);
        for layer in &self.layers[1..] {
            h = layer.forward_eval(params, &h);
        }
        h
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &MlpCache,
        grad_out: Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(m) = &cache.masks[i] {
                g *= m;
            }
            g = layer.backward(params, &cache.layers[i], &g, grads);
        }
        g
    }
}

/// Mean over groups of `group` consecutive rows.
pub fn group_mean(x: &Array2<f64>, group: usize) -> Array2<f64> {
    let n = x.nrows() / group;
    let mut out = Array2::zeros((n, x.ncols()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let block = x.slice(ndarray::s![i * group..(i + 1) * group, ..]);
        row.assign(&block.mean_axis(Axis(0)).expect("non-empty group"));
    }
    out
}

/// Adjoint of [`group_mean`]: spreads each row's gradient over its group.
pub fn group_mean_backward(grad: &Array2<f64>, group: usize) -> Array2<f64> {
    let scale = 1.0 / group as f64;
    let mut out = Array2::zeros((grad.nrows() * group, grad.ncols()));
    for (i, row) in grad.rows().into_iter().enumerate() {
        for k in 0..group {
            out.row_mut(i * group + k).assign(&(&row * scale));
        }
    }
    out
}

/// Repeats each row `times` times (row i → rows i*times..(i+1)*times).
pub fn repeat_rows(x: &Array2<f64>, times: usize) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows() * times, x.ncols()));
    for (i, row) in x.rows().into_iter().enumerate() {
        for k in 0..times {
            out.row_mut(i * times + k).assign(&row);
        }
    }
    out
}

/// Adjoint of [`repeat_rows`]: sums each group of `times` rows.
pub fn repeat_rows_backward(grad: &Array2<f64>, times: usize) -> Array2<f64> {
    let n = grad.nrows() / times;
    let mut out = Array2::zeros((n, grad.ncols()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for k in 0..times {
            row += &grad.row(i * times + k);
        }
    }
    out
}

pub fn row_vector(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

pub fn to_rows(v: &[Array1<f64>]) -> Array2<f64> {
    let cols = v.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((v.len(), cols));
    for (mut row, src) in out.rows_mut().into_iter().zip(v) {
        row.assign(src);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use ndarray::array;

    fn rng() -> Rng {
        SeedTree::new(1).stream("test", &[])
    }

    #[test]
    fn dense_forward_examples() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let out = dense_forward(&[1.0, 2.0], eye.view(), &[0.0, 0.0], Activation::Identity).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);

        let w = array![[1.0]];
        let out = dense_forward(&[-1.0], w.view(), &[0.0], Activation::Relu).unwrap();
        assert_eq!(out, vec![0.0]);

        let w = array![[3.0]];
        let out = dense_forward(&[0.0], w.view(), &[2.0], Activation::Tanh).unwrap();
        assert!((out[0] - 0.964_027_580_075_817).abs() < 1e-12);

        let w = array![[1.0, 2.0]];
        assert!(matches!(
            dense_forward(&[1.0], w.view(), &[0.0], Activation::Relu),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn polynomial_gradient() {
        let mut params = ParamStore::new();
        let p = params
            .register("p", &[1], ParamKind::Weight, vec![3.0])
            .unwrap();
        let (v, g) = compute_gradient(&params, |ps, gr| {
            let x = ps.slice(p)[0];
            gr.slice_mut(p)[0] += 2.0 * x;
            Ok(x * x)
        })
        .unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g.slice(p), &[6.0]);

        let (_, g) = compute_gradient(&params, |_, _| Ok(1.5)).unwrap();
        assert_eq!(g.slice(p), &[0.0]);

        let err = compute_gradient(&params, |_, _| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn dropout_examples() {
        let mut r = rng();
        assert!(dropout_mask(100, 0.0, &mut r).unwrap().iter().all(|&m| m == 1.0));
        let m = dropout_mask(1_000_000, 0.05, &mut r).unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((0.995..=1.005).contains(&mean), "mean {mean}");
        assert!(dropout_mask(3, 1.0, &mut r).is_err());
        assert!(dropout_mask(3, -0.1, &mut r).is_err());
    }

    #[test]
    fn eval_mode_disables_dropout() {
        let mut params = ParamStore::new();
        let mut r = rng();
        let mlp = Mlp::new(
            &mut params, "m", 3, &[16], 2, Activation::Relu, Activation::Identity, Init::He, 0.5, &mut r,
        )
        .unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.3 - 0.5);
        let (y, _) = mlp.forward(&params, x.clone(), &mut Mode::Eval).unwrap();
        assert_eq!(y, mlp.forward_eval(&params, &x));
    }

    #[test]
    fn l2_examples() {
        let mut params = ParamStore::new();
        params.register("w", &[1, 1], ParamKind::Weight, vec![2.0]).unwrap();
        params.register("b", &[1], ParamKind::Bias, vec![5.0]).unwrap();
        assert!((l2_penalty(&params, 1e-3) - 0.004).abs() < 1e-15);
        assert_eq!(l2_penalty(&params, 0.0), 0.0);
        let mut zeros = ParamStore::new();
        zeros.register("w", &[2, 2], ParamKind::Weight, vec![0.0; 4]).unwrap();
        assert_eq!(l2_penalty(&zeros, 1.0), 0.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut params = ParamStore::new();
        params.register("a", &[2], ParamKind::Bias, vec![0.0; 2]).unwrap();
        assert!(params.register("a", &[2], ParamKind::Bias, vec![0.0; 2]).is_err());
        assert!(params.register("c", &[2], ParamKind::Bias, vec![0.0; 3]).is_err());
    }

    fn mlp_loss(mlp: &Mlp, params: &ParamStore, x: &Array2<f64>) -> f64 {
        let y = mlp.forward_eval(params, x);
        y.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v.sin()).sum()
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for act in [
            Activation::Relu,
            Activation::Elu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Identity,
        ] {
            let mut params = ParamStore::new();
            let mut r = rng();
            let mlp = Mlp::new(
                &mut params, "m", 3, &[5, 4], 2, act, Activation::Tanh, Init::He, 0.0, &mut r,
            )
            .unwrap();
            let x = Array2::from_shape_fn((3, 3), |(i, j)| ((i * 3 + j) as f64 * 0.7).sin());
            let (_, grads) = compute_gradient(&params, |ps, gr| {
                let (y, cache) = mlp.forward(ps, x.clone(), &mut Mode::Eval)?;
                let mut gy = y.clone();
                for (i, (g, v)) in gy.iter_mut().zip(y.iter()).enumerate() {
                    *g = (i as f64 + 1.0) * (v.sin() + v * v.cos());
                }
                mlp.backward(ps, &cache, gy, gr);
                Ok(mlp_loss(&mlp, ps, &x))
            })
            .unwrap();
            let fd = finite_difference_gradient(&params, 1e-5, |ps| mlp_loss(&mlp, ps, &x));
            let ratio = gradient_check_ratio(grads.values(), &fd, 1e-4, 1e-7);
            assert!(ratio <= 1.0, "{act:?}: ratio {ratio}");
        }
    }
}
