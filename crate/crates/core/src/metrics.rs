//! Posterior-quality metrics: Gaussian-kernel MMD, moment biases and 1-D W₁.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::model_zoo::OracleResult;
use crate::{Error, Result};

pub const DEFAULT_EVAL_SAMPLES: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "h")]
pub enum Bandwidth {
    MedianHeuristic,
    Fixed(f64),
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let pooled: Vec<ArrayView1<'_, f64>> = a.rows().into_iter().chain(b.rows()).collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    *m
}

fn mean_kernel(a: &Array2<f64>, b: &Array2<f64>, inv: f64, same: bool) -> f64 {
    let mut total = 0.0;
    for (i, x) in a.rows().into_iter().enumerate() {
        if same {
            // symmetric: diagonal contributes exp(0) = 1, off-diagonal twice
            total += 1.0;
            for y in b.rows().into_iter().skip(i + 1) {
                total += 2.0 * (-sq_dist(x, y) * inv).exp();
            }
        } else {
            for y in b.rows() {
                total += (-sq_dist(x, y) * inv).exp();
            }
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// `sqrt(MMD²)` from the biased V-statistic with `k(a,b) = exp(−‖a−b‖²/(2h²))`.
pub fn mmd_gaussian(a: &Array2<f64>, b: &Array2<f64>, bandwidth: Bandwidth) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 || a.ncols() != b.ncols() {
        return Err(Error::Input("mmd needs non-empty sample sets of equal dimension".into()));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::Config(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::MedianHeuristic => {
            let h = median_distance(a, b);
            if h == 0.0 {
                if multiset_eq(a, b) {
                    return Ok(0.0);
                }
                return Err(Error::numerical("mmd_gaussian", "median heuristic bandwidth is zero"));
            }
            h
        }
    };
    let inv = 1.0 / (2.0 * h * h);
    let kaa = mean_kernel(a, a, inv, true);
    let kbb = mean_kernel(b, b, inv, true);
    let kab = (mean_kernel(a, b, inv, false) + mean_kernel(b, a, inv, false)) / 2.0;
    Ok((kaa + kbb - 2.0 * kab).max(0.0).sqrt())
}

fn sorted_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.sort_by(|x, y| x.iter().zip(y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows
}

fn multiset_eq(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.nrows() == b.nrows() && sorted_rows(a) == sorted_rows(b)
}

/// Empirical W₁ between equal-size scalar samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input(format!(
            "wasserstein_1d needs equal non-empty sample sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn sample_mean_sd(samples: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = samples.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let sd = samples.std_axis(Axis(0), 1.0).to_vec();
    (mean, sd)
}

/// Per-dimension `|mean − oracle mean|` and `|sd − oracle sd|`.
pub fn bias_report(samples: &Array2<f64>, oracle: &OracleResult) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.nrows() < 2 || samples.ncols() != oracle.mean.len() {
        return Err(Error::Input("bias_report needs ≥ 2 samples matching the oracle dimension".into()));
    }
    let (m, s) = sample_mean_sd(samples);
    Ok((
        m.iter().zip(&oracle.mean).map(|(a, b)| (a - b).abs()).collect(),
        s.iter().zip(&oracle.sd).map(|(a, b)| (a - b).abs()).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean_bias: Vec<f64>,
    pub sd_bias: Vec<f64>,
    pub mmd: f64,
    pub wasserstein: Vec<f64>,
    pub n_samples: usize,
    pub bandwidth: Bandwidth,
}

impl MetricReport {
    /// Compares approximate draws with oracle draws of the same size.
    pub fn compute(
        approx: &Array2<f64>,
        oracle: &OracleResult,
        oracle_samples: &Array2<f64>,
        bandwidth: Bandwidth,
    ) -> Result<Self> {
        let (mean_bias, sd_bias) = bias_report(approx, oracle)?;
        let wasserstein = (0..approx.ncols())
            .map(|j| {
                wasserstein_1d(
                    &approx.column(j).to_vec(),
                    &oracle_samples.column(j).to_vec(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mean_bias,
            sd_bias,
            mmd: mmd_gaussian(approx, oracle_samples, bandwidth)?,
            wasserstein,
            n_samples: approx.nrows(),
            bandwidth,
        })
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub factor: String,
    pub value: String,
    pub method: String,
    pub seed: u64,
    pub mu_obs: String,
    pub param: String,
    pub mean_bias: f64,
    pub sd_bias: f64,
    pub mmd: f64,
    pub wasserstein: f64,
}

pub const METRICS_HEADER: [&str; 11] = [
    "task",
    "factor",
    "value",
    "method",
    "seed",
    "mu_obs",
    "param",
    "mean_bias",
    "sd_bias",
    "mmd",
    "wasserstein",
];

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    if !path.exists() {
        return Err(Error::MissingResults(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(Error::Data(format!("{}: unexpected metrics header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_metrics_json(path: &Path, rows: &[MetricRow]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(rows)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::OracleKind;
    use crate::rng::SeedTree;
    use rand_distr::{Distribution, Normal};

    fn col(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    fn normal(n: usize, mean: f64, seed: u64) -> Array2<f64> {
        let mut rng = SeedTree::new(seed).stream("n", &[]);
        let d = Normal::new(mean, 1.0).unwrap();
        col(&(0..n).map(|_| d.sample(&mut rng)).collect::<Vec<_>>())
    }

    fn oracle(mean: f64, sd: f64) -> OracleResult {
        OracleResult {
            kind: OracleKind::Analytic,
            mean: vec![mean],
            sd: vec![sd],
            samples: None,
            diagnostics: None,
        }
    }

    #[test]
    fn mmd_examples() {
        let a = normal(50, 0.0, 1);
        let mut shuffled: Vec<f64> = a.column(0).to_vec();
        shuffled.reverse();
        assert_eq!(mmd_gaussian(&a, &col(&shuffled), Bandwidth::MedianHeuristic).unwrap(), 0.0);
        let v = mmd_gaussian(&col(&[0.0]), &col(&[10.0]), Bandwidth::Fixed(1.0)).unwrap();
        let expected = (2.0 - 2.0 * (-50.0f64).exp()).sqrt();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.41421).abs() < 1e-5);
    }

    #[test]
    fn mmd_ordering_and_symmetry() {
        let a = normal(2000, 0.0, 2);
        let far = normal(2000, 3.0, 3);
        let near = normal(2000, 0.1, 4);
        let m_far = mmd_gaussian(&a, &far, Bandwidth::MedianHeuristic).unwrap();
        let m_near = mmd_gaussian(&a, &near, Bandwidth::MedianHeuristic).unwrap();
        assert!(m_far > m_near);
        assert_eq!(m_near, mmd_gaussian(&near, &a, Bandwidth::MedianHeuristic).unwrap());
    }

    #[test]
    fn mmd_degenerate() {
        let same = col(&[2.0, 2.0]);
        assert_eq!(mmd_gaussian(&same, &same, Bandwidth::MedianHeuristic).unwrap(), 0.0);
        assert!(mmd_gaussian(&col(&[1.0]), &col(&[1.0]), Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.0], &[5.0]).unwrap(), 5.0);
        assert!(matches!(wasserstein_1d(&[0.0], &[1.0, 2.0]), Err(Error::Input(_))));
        let a: Vec<f64> = normal(100, 0.0, 5).column(0).to_vec();
        let shifted: Vec<f64> = a.iter().map(|v| v - 2.5).collect();
        assert!((wasserstein_1d(&a, &shifted).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bias_examples() {
        let o = oracle(0.0, 1.0);
        let s = normal(100_000, 0.0, 6);
        let (mb, sb) = bias_report(&s, &o).unwrap();
        assert!(mb[0] < 0.02);
        // three standard errors of the sample mean and sd
        assert!(mb[0] < 3.0 / (1e5f64).sqrt());
        assert!(sb[0] < 3.0 / (2e5f64).sqrt());

        let below = normal(1000, -1.0, 7);
        let (m0, _) = bias_report(&below, &oracle(0.0, 1.0)).unwrap();
        let (m1, _) = bias_report(&below, &oracle(1.0, 1.0)).unwrap();
        assert!((m1[0] - (m0[0] + 1.0)).abs() < 1e-12);

        let constant = col(&[4.0; 200]);
        let (_, sb) = bias_report(&constant, &oracle(0.0, 1.7)).unwrap();
        assert_eq!(sb[0], 1.7);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![MetricRow {
            task: "gaussian".into(),
            factor: "D".into(),
            value: "2".into(),
            method: "npe".into(),
            seed: 0,
            mu_obs: "3".into(),
            param: "theta0".into(),
            mean_bias: 0.5,
            sd_bias: 0.1,
            mmd: 0.2,
            wasserstein: 0.4,
        }];
        write_metrics_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("task,factor,value,method,seed,mu_obs,param,mean_bias,sd_bias,mmd,wasserstein\n"));
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
        assert!(matches!(read_metrics_csv(&dir.path().join("none.csv")), Err(Error::MissingResults(_))));
    }
}
