use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::{normal_log_pdf, std_normal, SimModel};
use crate::rng::Rng;
use crate::summary::Observation;
use crate::{Error, Result};

pub const AR1_PARAM_NAMES: [&str; 5] = ["alpha", "beta", "gamma", "delta", "log_sigma"];

const CSV_HEADER: [&str; 5] = ["country", "year", "passengers_diff", "household_debt", "gdp_per_capita"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Params {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub log_sigma: f64,
}

impl Ar1Params {
    pub fn from_slice(theta: &[f64]) -> Self {
        Self {
            alpha: theta[0],
            beta: theta[1],
            gamma: theta[2],
            delta: theta[3],
            log_sigma: theta[4],
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.alpha, self.beta, self.gamma, self.delta, self.log_sigma]
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    fn mean(&self, y_prev: f64, u: f64, w: f64) -> f64 {
        self.alpha + y_prev * self.beta + u * self.gamma + w * self.delta
    }
}

/// `y_t ~ N(α + β·y_{t-1} + γ·u_{t-1} + δ·w_{t-1}, σ)` for `t = 1..=steps`.
pub fn ar1_simulate(
    params: &Ar1Params,
    u: &[f64],
    w: &[f64],
    y0: f64,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Input("AR(1) series needs at least one step".into()));
    }
    if u.len() < steps || w.len() < steps {
        return Err(Error::Input(format!(
            "covariates cover {} / {} steps, need {steps}",
            u.len(),
            w.len()
        )));
    }
    if !u[..steps].iter().chain(&w[..steps]).all(|v| v.is_finite()) || !y0.is_finite() {
        return Err(Error::Input("non-finite covariate or initial value".into()));
    }
    let sigma = params.sigma();
    let mut prev = y0;
    Ok((0..steps)
        .map(|t| {
            let eps: f64 = StandardNormal.sample(rng);
            prev = params.mean(prev, u[t], w[t]) + sigma * eps;
            prev
        })
        .collect())
}

/// Sum of step-wise normal log-densities of `series` (`y_1..y_T`) given `y0`.
pub fn ar1_log_likelihood(params: &Ar1Params, y0: f64, series: &[f64], u: &[f64], w: &[f64]) -> f64 {
    let sigma = params.sigma();
    let mut prev = y0;
    let mut acc = 0.0;
    for (t, &y) in series.iter().enumerate() {
        acc += normal_log_pdf(y, params.mean(prev, u[t], w[t]), sigma);
        prev = y;
    }
    acc
}

/// AR(1) model with covariates and independent normal priors.
///
/// Observations are `(steps + 1) × 3` matrices with rows `(y_t, u_t, w_t)`;
/// row 0 holds the conditioning value `y_0`. Training simulations draw
/// `y_0` and both covariates i.i.d. standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Model {
    pub steps: usize,
    pub prior_mean: [f64; 5],
    pub prior_sd: [f64; 5],
}

impl Ar1Model {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            prior_mean: [0.0, 0.0, 0.0, 0.0, -1.0],
            prior_sd: [0.5, 0.2, 0.5, 0.5, 0.5],
        }
    }

    fn split(obs: &Observation) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let y0 = obs[[0, 0]];
        let series = obs.column(0).iter().skip(1).copied().collect();
        let u = obs.column(1).to_vec();
        let w = obs.column(2).to_vec();
        (y0, series, u, w)
    }
}

impl SimModel for Ar1Model {
    fn param_dim(&self) -> usize {
        5
    }

    fn obs_shape(&self) -> (usize, usize) {
        (self.steps + 1, 3)
    }

    fn param_names(&self) -> Vec<String> {
        AR1_PARAM_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        self.prior_mean
            .iter()
            .zip(&self.prior_sd)
            .map(|(m, s)| m + s * std_normal(rng))
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.prior_mean.iter().zip(&self.prior_sd))
            .map(|(t, (m, s))| normal_log_pdf(*t, *m, *s))
            .sum()
    }

    fn prior_mean(&self) -> Vec<f64> {
        self.prior_mean.to_vec()
    }

    fn prior_sd(&self) -> Vec<f64> {
        self.prior_sd.to_vec()
    }

    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Observation {
        let rows = self.steps + 1;
        let y0: f64 = StandardNormal.sample(rng);
        let u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        let w: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        let series = ar1_simulate(&Ar1Params::from_slice(theta), &u, &w, y0, self.steps, rng)
            .expect("finite standard-normal covariates");
        let mut obs = Array2::zeros((rows, 3));
        obs[[0, 0]] = y0;
        for t in 0..rows {
            if t > 0 {
                obs[[t, 0]] = series[t - 1];
            }
            obs[[t, 1]] = u[t];
            obs[[t, 2]] = w[t];
        }
        obs
    }

    fn log_likelihood(&self, theta: &[f64], obs: &Observation) -> f64 {
        let (y0, series, u, w) = Self::split(obs);
        ar1_log_likelihood(&Ar1Params::from_slice(theta), y0, &series, &u, &w)
    }
}

/// One country's differenced series with covariates, one entry per year.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Country {
    pub name: String,
    pub years: Vec<i64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl Ar1Country {
    pub fn observation(&self) -> Observation {
        let mut obs = Array2::zeros((self.y.len(), 3));
        for t in 0..self.y.len() {
            obs[[t, 0]] = self.y[t];
            obs[[t, 1]] = self.u[t];
            obs[[t, 2]] = self.w[t];
        }
        obs
    }
}

/// Z-scores both covariates across every row of the pool.
pub fn standardize_covariates(countries: &mut [Ar1Country]) {
    fn zscore(values: Vec<&mut f64>) {
        let n = values.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = values.iter().map(|v| **v).sum::<f64>() / n;
        let sd = (values.iter().map(|v| (**v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for v in values {
            *v = (*v - mean) / sd;
        }
    }
    zscore(countries.iter_mut().flat_map(|c| c.u.iter_mut()).collect());
    zscore(countries.iter_mut().flat_map(|c| c.w.iter_mut()).collect());
}

/// Reads the AR(1) country CSV and validates it. Covariates are returned raw;
/// call [`standardize_covariates`] before use.
pub fn ingest_ar1_csv(path: &Path) -> Result<Vec<Ar1Country>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))?;
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_name: HashMap<String, Ar1Country> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let cell = |c: usize| -> Result<&str> {
            let v = record.get(columns[c]).map(str::trim).unwrap_or("");
            if v.is_empty() {
                Err(Error::Data(format!("row {row}, column '{}': missing value", CSV_HEADER[c])))
            } else {
                Ok(v)
            }
        };
        let number = |c: usize| -> Result<f64> {
            let v: f64 = cell(c)?.parse().map_err(|_| {
                Error::Data(format!("row {row}, column '{}': not a number", CSV_HEADER[c]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Data(format!("row {row}, column '{}': non-finite value", CSV_HEADER[c])))
            }
        };
        let name = cell(0)?.to_string();
        let year: i64 = cell(1)?
            .parse()
            .map_err(|_| Error::Data(format!("row {row}, column 'year': not an integer")))?;
        let (y, u, w) = (number(2)?, number(3)?, number(4)?);
        let entry = by_name.entry(name.clone()).or_insert_with(|| {
            order.push(name.clone());
            Ar1Country {
                name: name.clone(),
                years: Vec::new(),
                y: Vec::new(),
                u: Vec::new(),
                w: Vec::new(),
            }
        });
        if let Some(&last) = entry.years.last() {
            if year <= last {
                return Err(Error::Data(format!(
                    "row {row}, column 'year': years for '{name}' must be strictly increasing ({year} after {last})"
                )));
            }
        }
        entry.years.push(year);
        entry.y.push(y);
        entry.u.push(u);
        entry.w.push(w);
    }
    if order.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let countries: Vec<Ar1Country> = order.iter().map(|n| by_name.remove(n).expect("known")).collect();
    let len = countries[0].y.len();
    if let Some(c) = countries.iter().find(|c| c.y.len() != len) {
        return Err(Error::Data(format!(
            "country '{}' has {} rows, expected {len} like the first country",
            c.name,
            c.y.len()
        )));
    }
    if len < 2 {
        return Err(Error::Data("each country needs at least two rows".into()));
    }
    Ok(countries)
}

pub fn write_ar1_csv(path: &Path, countries: &[Ar1Country]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for c in countries {
        for t in 0..c.y.len() {
            writer.write_record([
                c.name.clone(),
                c.years[t].to_string(),
                c.y[t].to_string(),
                c.u[t].to_string(),
                c.w[t].to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Offline stand-in for real country data: parameters from the prior and
/// trending covariates on raw scales (debt in % of GDP, GDP per capita).
#[derive(Debug, Clone)]
pub struct SyntheticCountries {
    pub countries: Vec<Ar1Country>,
    /// Parameters that generated each country.
    pub truth: Vec<Vec<f64>>,
}

impl SyntheticCountries {
    pub fn generate(model: &Ar1Model, n: usize, first_year: i64, rng: &mut Rng) -> Self {
        let rows = model.steps + 1;
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let mut raw: Vec<Ar1Country> = (0..n)
            .map(|j| {
                let debt_level = 80.0 + 25.0 * normal();
                let debt_slope = 2.0 * normal();
                let gdp_level = 35_000.0 + 10_000.0 * normal();
                let gdp_growth = 600.0 + 300.0 * normal();
                let u = (0..rows)
                    .map(|t| debt_level + debt_slope * t as f64 + 2.0 * normal())
                    .collect();
                let w = (0..rows)
                    .map(|t| gdp_level + gdp_growth * t as f64 + 300.0 * normal())
                    .collect();
                Ar1Country {
                    name: format!("C{j:02}"),
                    years: (0..rows as i64).map(|t| first_year + t).collect(),
                    y: vec![0.0; rows],
                    u,
                    w,
                }
            })
            .collect();
        standardize_covariates(&mut raw);
        let mut truth = Vec::with_capacity(n);
        for c in raw.iter_mut() {
            let theta = model.sample_prior(rng);
            let y0: f64 = StandardNormal.sample(rng);
            let series = ar1_simulate(&Ar1Params::from_slice(&theta), &c.u, &c.w, y0, model.steps, rng)
                .expect("finite synthetic covariates");
            c.y[0] = y0;
            c.y[1..].copy_from_slice(&series);
            truth.push(theta);
        }
        Self { countries: raw, truth }
    }
}
