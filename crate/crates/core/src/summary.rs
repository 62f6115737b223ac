//! Summary networks `h(x)` mapping a set or sequence of rows to a fixed-length
//! condition vector.
//!
//! The deep set is composed as: equivariant blocks → inner network applied to
//! every element → mean pooling → outer network. Each equivariant block
//! computes `h_i ← φ([h_i, mean_j ρ(h_j)])`, where `ρ` and `φ` are two-layer
//! ReLU networks.
//!
//! The recurrent summary runs a single-layer LSTM (gates ordered
//! input, forget, cell, output; forget bias initialised to 1) over the rows of
//! the sequence and applies a dense head to the final hidden state.

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffmath::{
    group_mean, group_mean_backward, he_uniform, repeat_rows, repeat_rows_backward, sigmoid,
    Activation, Gradients, Init, Mlp, MlpCache, Mode, ParamId, ParamKind, ParamStore,
};
use crate::rng::Rng;
use crate::{Error, Result};

/// One observation: rows are set elements or time steps, columns are features.
pub type Observation = Array2<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummaryConfig {
    /// No network: the observation is flattened into the condition vector.
    None { rows: usize, features: usize },
    DeepSet {
        features: usize,
        equivariant_blocks: usize,
        units: usize,
        output_dim: usize,
    },
    Recurrent {
        features: usize,
        hidden: usize,
        head: Vec<usize>,
    },
}

impl SummaryConfig {
    pub fn deep_set(features: usize) -> Self {
        SummaryConfig::DeepSet {
            features,
            equivariant_blocks: 2,
            units: 64,
            output_dim: 30,
        }
    }

    pub fn recurrent(features: usize) -> Self {
        SummaryConfig::Recurrent {
            features,
            hidden: 64,
            head: vec![256, 64],
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SummaryConfig::None { rows, features } => rows * features,
            SummaryConfig::DeepSet { output_dim, .. } => *output_dim,
            SummaryConfig::Recurrent { hidden, head, .. } => *head.last().unwrap_or(hidden),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepSet {
    features: usize,
    blocks: Vec<(Mlp, Mlp)>,
    inner: Mlp,
    outer: Mlp,
}

pub struct DeepSetCache {
    group: usize,
    blocks: Vec<(MlpCache, MlpCache, usize)>,
    inner: MlpCache,
    outer: MlpCache,
}

impl DeepSet {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        features: usize,
        equivariant_blocks: usize,
        units: usize,
        output_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let relu = Activation::Relu;
        let mut blocks = Vec::with_capacity(equivariant_blocks);
        let mut width = features;
        for b in 0..equivariant_blocks {
            let pool = Mlp::new(params, &format!("{name}.equiv{b}.pool"), width, &[units], units, relu, relu, Init::He, 0.0, rng)?;
            let elem = Mlp::new(params, &format!("{name}.equiv{b}.elem"), width + units, &[units], units, relu, relu, Init::He, 0.0, rng)?;
            blocks.push((pool, elem));
            width = units;
        }
        let inner = Mlp::new(params, &format!("{name}.inner"), width, &[units], units, relu, relu, Init::He, 0.0, rng)?;
        let outer = Mlp::new(
            params,
            &format!("{name}.outer"),
            units,
            &[units, units],
            output_dim,
            relu,
            Activation::Identity,
            Init::He,
            0.0,
            rng,
        )?;
        Ok(Self {
            features,
            blocks,
            inner,
            outer,
        })
    }

    /// `x` stacks `x.nrows() / group` sets of `group` rows each.
    pub fn forward(
        &self,
        params: &ParamStore,
        x: Array2<f64>,
        group: usize,
        mode: &mut Mode<'_>,
    ) -> Result<(Array2<f64>, DeepSetCache)> {
        let mut h = x;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (pool, elem) in &self.blocks {
            let width = h.ncols();
            let (p, pool_cache) = pool.forward(params, h.clone(), mode)?;
            let pooled = repeat_rows(&group_mean(&p, group), group);
            let cat = concatenate(Axis(1), &[h.view(), pooled.view()]).expect("concat");
            let (next, elem_cache) = elem.forward(params, cat, mode)?;
            blocks.push((pool_cache, elem_cache, width));
            h = next;
        }
        let (e, inner) = self.inner.forward(params, h, mode)?;
        let (out, outer) = self.outer.forward(params, group_mean(&e, group), mode)?;
        Ok((
            out,
            DeepSetCache {
                group,
                blocks,
                inner,
                outer,
            },
        ))
    }

    pub fn backward(&self, params: &ParamStore, cache: &DeepSetCache, grad: Array2<f64>, grads: &mut Gradients) {
        let g_pooled = self.outer.backward(params, &cache.outer, grad, grads);
        let g_e = group_mean_backward(&g_pooled, cache.group);
        let mut g_h = self.inner.backward(params, &cache.inner, g_e, grads);
        for ((pool, elem), (pool_cache, elem_cache, width)) in self.blocks.iter().zip(&cache.blocks).rev() {
            let g_cat = elem.backward(params, elem_cache, g_h, grads);
            let g_rep = g_cat.slice(s![.., *width..]).to_owned();
            let g_p = group_mean_backward(&repeat_rows_backward(&g_rep, cache.group), cache.group);
            let g_in = pool.backward(params, pool_cache, g_p, grads);
            g_h = g_cat.slice(s![.., ..*width]).to_owned() + g_in;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lstm {
    features: usize,
    hidden: usize,
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
    head: Mlp,
}

struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Gate activations `[i, f, g, o]`, each `B × H`, concatenated column-wise.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

pub struct LstmCache {
    steps: Vec<LstmStep>,
    head: MlpCache,
}

impl Lstm {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        features: usize,
        hidden: usize,
        head: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        let w_input = params.register(
            format!("{name}.lstm.w_input"),
            &[4 * hidden, features],
            ParamKind::Weight,
            he_uniform(4 * hidden, features, rng),
        )?;
        let w_hidden = params.register(
            format!("{name}.lstm.w_hidden"),
            &[4 * hidden, hidden],
            ParamKind::Weight,
            he_uniform(4 * hidden, hidden, rng),
        )?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = params.register(format!("{name}.lstm.bias"), &[4 * hidden], ParamKind::Bias, b)?;
        let (widths, out) = match head.split_last() {
            Some((out, widths)) => (widths.to_vec(), *out),
            None => return Err(Error::Config("recurrent head needs at least one layer".into())),
        };
        let head = Mlp::new(
            params,
            &format!("{name}.head"),
            hidden,
            &widths,
            out,
            Activation::Elu,
            Activation::Identity,
            Init::He,
            0.0,
            rng,
        )?;
        Ok(Self {
            features,
            hidden,
            w_input,
            w_hidden,
            bias,
            head,
        })
    }

    /// `sequences[t]` is the `B × features` input at step `t`.
    pub fn forward(
        &self,
        params: &ParamStore,
        sequences: &[Array2<f64>],
        mode: &mut Mode<'_>,
    ) -> Result<(Array2<f64>, LstmCache)> {
        let hd = self.hidden;
        let batch = sequences[0].nrows();
        let mut h = Array2::zeros((batch, hd));
        let mut c = Array2::zeros((batch, hd));
        let wx = params.matrix(self.w_input);
        let wh = params.matrix(self.w_hidden);
        let b = params.vector(self.bias);
        let mut steps = Vec::with_capacity(sequences.len());
        for x in sequences {
            let mut a = x.dot(&wx.t()) + h.dot(&wh.t());
            a += &b;
            for mut row in a.rows_mut() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if (2 * hd..3 * hd).contains(&k) { v.tanh() } else { sigmoid(*v) };
                }
            }
            let i = a.slice(s![.., 0..hd]);
            let f = a.slice(s![.., hd..2 * hd]);
            let g = a.slice(s![.., 2 * hd..3 * hd]);
            let o = a.slice(s![.., 3 * hd..]);
            let c_new = &f * &c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            steps.push(LstmStep {
                x: x.clone(),
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates: a,
                tanh_c,
            });
        }
        let (out, head) = self.head.forward(params, h, mode)?;
        Ok((out, LstmCache { steps, head }))
    }

    pub fn backward(&self, params: &ParamStore, cache: &LstmCache, grad: Array2<f64>, grads: &mut Gradients) {
        let hd = self.hidden;
        let mut dh = self.head.backward(params, &cache.head, grad, grads);
        let mut dc: Array2<f64> = Array2::zeros(dh.raw_dim());
        let wh = params.matrix(self.w_hidden).to_owned();
        let mut da = Array2::zeros((dh.nrows(), 4 * hd));
        for step in cache.steps.iter().rev() {
            let i = step.gates.slice(s![.., 0..hd]);
            let f = step.gates.slice(s![.., hd..2 * hd]);
            let g = step.gates.slice(s![.., 2 * hd..3 * hd]);
            let o = step.gates.slice(s![.., 3 * hd..]);
            dc = dc + &dh * &o * step.tanh_c.mapv(|t| 1.0 - t * t);
            ndarray::Zip::from(da.slice_mut(s![.., 0..hd]))
                .and(&dc)
                .and(&g)
                .and(&i)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
            ndarray::Zip::from(da.slice_mut(s![.., hd..2 * hd]))
                .and(&dc)
                .and(&step.c_prev)
                .and(&f)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            ndarray::Zip::from(da.slice_mut(s![.., 2 * hd..3 * hd]))
                .and(&dc)
                .and(&i)
                .and(&g)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            ndarray::Zip::from(da.slice_mut(s![.., 3 * hd..]))
                .and(&dh)
                .and(&step.tanh_c)
                .and(&o)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
            {
                let mut gwx = grads.matrix_mut(self.w_input);
                ndarray::linalg::general_mat_mul(1.0, &da.t(), &step.x, 1.0, &mut gwx);
            }
            {
                let mut gwh = grads.matrix_mut(self.w_hidden);
                ndarray::linalg::general_mat_mul(1.0, &da.t(), &step.h_prev, 1.0, &mut gwh);
            }
            let gb = grads.slice_mut(self.bias);
            for row in da.rows() {
                for (b, v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
            dh = da.dot(&wh);
            dc = dc * f;
        }
    }
}

#[derive(Debug, Clone)]
pub enum SummaryNet {
    None { rows: usize, features: usize },
    DeepSet(DeepSet),
    Recurrent(Lstm),
}

pub enum SummaryCache {
    None,
    DeepSet(DeepSetCache),
    Recurrent(LstmCache),
}

impl SummaryNet {
    pub fn new(params: &mut ParamStore, name: &str, config: &SummaryConfig, rng: &mut Rng) -> Result<Self> {
        Ok(match config {
            SummaryConfig::None { rows, features } => SummaryNet::None {
                rows: *rows,
                features: *features,
            },
            SummaryConfig::DeepSet {
                features,
                equivariant_blocks,
                units,
                output_dim,
            } => SummaryNet::DeepSet(DeepSet::new(
                params,
                name,
                *features,
                *equivariant_blocks,
                *units,
                *output_dim,
                rng,
            )?),
            SummaryConfig::Recurrent { features, hidden, head } => {
                SummaryNet::Recurrent(Lstm::new(params, name, *features, *hidden, head, rng)?)
            }
        })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SummaryNet::None { rows, features } => rows * features,
            SummaryNet::DeepSet(d) => d.outer.out_dim(),
            SummaryNet::Recurrent(l) => l.head.out_dim(),
        }
    }

    fn validate(&self, obs: &[&Observation]) -> Result<(usize, usize)> {
        let first = obs
            .first()
            .ok_or_else(|| Error::Input("empty observation batch".into()))?;
        let (rows, cols) = first.dim();
        if rows == 0 {
            return Err(Error::Input("observation has no rows (K = 0 or T = 0)".into()));
        }
        if obs.iter().any(|o| o.dim() != (rows, cols)) {
            return Err(Error::Input("observations in one batch must share a shape".into()));
        }
        let expected = match self {
            SummaryNet::None { rows: r, features } => {
                if *r != rows {
                    return Err(Error::Input(format!("expected {r} rows per observation, got {rows}")));
                }
                *features
            }
            SummaryNet::DeepSet(d) => d.features,
            SummaryNet::Recurrent(l) => l.features,
        };
        if cols != expected {
            return Err(Error::Input(format!("expected {expected} features, got {cols}")));
        }
        if !obs.iter().all(|o| o.iter().all(|v| v.is_finite())) {
            return Err(Error::Input("observation contains non-finite values".into()));
        }
        Ok((rows, cols))
    }

    pub fn forward(
        &self,
        params: &ParamStore,
        obs: &[&Observation],
        mode: &mut Mode<'_>,
    ) -> Result<(Array2<f64>, SummaryCache)> {
        let (rows, cols) = self.validate(obs)?;
        match self {
            SummaryNet::None { .. } => {
                let mut out = Array2::zeros((obs.len(), rows * cols));
                for (mut r, o) in out.rows_mut().into_iter().zip(obs) {
                    r.iter_mut().zip(o.iter()).for_each(|(d, s)| *d = *s);
                }
                Ok((out, SummaryCache::None))
            }
            SummaryNet::DeepSet(net) => {
                let views: Vec<_> = obs.iter().map(|o| o.view()).collect();
                let stacked = concatenate(Axis(0), &views).expect("stack");
                let (out, cache) = net.forward(params, stacked, rows, mode)?;
                Ok((out, SummaryCache::DeepSet(cache)))
            }
            SummaryNet::Recurrent(net) => {
                let steps: Vec<Array2<f64>> = (0..rows)
                    .map(|t| {
                        let mut x = Array2::zeros((obs.len(), cols));
                        for (mut r, o) in x.rows_mut().into_iter().zip(obs) {
                            r.assign(&o.row(t));
                        }
                        x
                    })
                    .collect();
                let (out, cache) = net.forward(params, &steps, mode)?;
                Ok((out, SummaryCache::Recurrent(cache)))
            }
        }
    }

    pub fn forward_eval(&self, params: &ParamStore, obs: &[&Observation]) -> Result<Array2<f64>> {
        Ok(self.forward(params, obs, &mut Mode::Eval)?.0)
    }

    pub fn backward(&self, params: &ParamStore, cache: &SummaryCache, grad: Array2<f64>, grads: &mut Gradients) {
        match (self, cache) {
            (SummaryNet::None { .. }, SummaryCache::None) => {}
            (SummaryNet::DeepSet(net), SummaryCache::DeepSet(c)) => net.backward(params, c, grad, grads),
            (SummaryNet::Recurrent(net), SummaryCache::Recurrent(c)) => net.backward(params, c, grad, grads),
            _ => panic!("summary cache does not match network"),
        }
    }
}

/// `h(x)` for a single observation.
pub fn summarize(net: &SummaryNet, params: &ParamStore, x: &Observation) -> Result<Vec<f64>> {
    Ok(net.forward_eval(params, &[x])?.row(0).to_vec())
}
