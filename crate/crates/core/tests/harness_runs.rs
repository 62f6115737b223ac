use std::path::Path;

use scabi::harness::{
    generate_figure_data, ingest_unlabeled_csv, read_manifest, run_experiment, ArchOverrides, ExperimentConfig, Task,
};
use scabi::metrics::{read_metrics_csv, METRICS_HEADER};
use scabi::Error;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.n_labeled = 64;
    cfg.unlabeled = 4;
    cfg.mu_obs = vec![0.0, 2.0, 5.0];
    cfg.refits = 2;
    cfg.eval_samples = 300;
    cfg.train.epochs = 2;
    cfg.train.l = 8;
    cfg.arch = ArchOverrides {
        coupling_layers: Some(2),
        hidden_units: Some(16),
        ..Default::default()
    };
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn untrained_methods_report_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.epochs = 0;
    cfg.refits = 1;
    let s = run_experiment(&cfg).unwrap();
    let npe: Vec<_> = s.rows.iter().filter(|r| r.method == "npe").collect();
    let sc: Vec<_> = s.rows.iter().filter(|r| r.method == "sc").collect();
    assert_eq!(npe.len(), sc.len());
    for (a, b) in npe.iter().zip(&sc) {
        assert_eq!((a.mean_bias, a.sd_bias, a.mmd), (b.mean_bias, b.sd_bias, b.mmd));
    }
}

#[test]
fn gaussian_run_writes_complete_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let s = run_experiment(&cfg).unwrap();
    assert!(s.aborted.is_empty());
    // μ values × methods × refits × parameters
    assert_eq!(s.rows.len(), 3 * 2 * 2 * 2);
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(read_metrics_csv(&dir.path().join("metrics.csv")).unwrap().len(), s.rows.len());
    for seed in [0, 1] {
        for m in ["npe", "sc"] {
            let run = dir.path().join(format!("runs/seed{seed}/{m}"));
            assert!(run.join("checkpoint.json").exists());
            let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
            assert_eq!(log.lines().count(), 2);
        }
    }
    let manifest = read_manifest(dir.path()).unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.seeds, vec![0, 1]);

    let forest = generate_figure_data(dir.path(), "forest").unwrap();
    let mut r = csv::Reader::from_path(forest).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let (a, b, c, d) = (col("q025"), col("q25"), col("q75"), col("q975"));
    let mut methods = std::collections::BTreeSet::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        let q: Vec<f64> = [a, b, c, d].iter().map(|&i| rec[i].parse().unwrap()).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        methods.insert(rec[col("method")].to_string());
    }
    assert_eq!(methods.into_iter().collect::<Vec<_>>(), ["npe", "oracle", "sc"]);

    let contour = generate_figure_data(dir.path(), "contour").unwrap();
    let lines = std::fs::read_to_string(contour).unwrap().lines().count();
    assert_eq!(lines, 1 + 3 * 3 * 100 * 100);
}

#[test]
fn missing_results_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_manifest(dir.path()), Err(Error::MissingResults(_))));
    assert!(matches!(generate_figure_data(dir.path(), "forest"), Err(Error::MissingResults(_))));
}

#[test]
fn ar1_run_writes_table_and_countries() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("ar1-desk").unwrap();
    cfg.countries = 3;
    cfg.unlabeled = 2;
    cfg.n_labeled = 64;
    cfg.eval_samples = 200;
    cfg.train.epochs = 1;
    cfg.train.l = 4;
    cfg.mh.samples = 400;
    cfg.mh.burn_in = 200;
    cfg.output_dir = dir.path().to_path_buf();
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.rows.len(), 3 * 2 * 5);
    assert!(dir.path().join("table.csv").exists());
    let back = ingest_unlabeled_csv(&dir.path().join("countries.csv"), Task::Ar1, &cfg).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[0].dim(), (cfg.steps + 1, 3));
}

const AR1_HEADER: &str = "country,year,passengers_diff,household_debt,gdp_per_capita";

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn ar1_csv_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset("ar1").unwrap();
    let mut text = format!("{AR1_HEADER}\n");
    for c in ["A", "B"] {
        for (i, year) in (2005..2010).enumerate() {
            text += &format!("{c},{year},{},{},{}\n", i as f64 * 0.1, i, 2 * i);
        }
    }
    let ok = ingest_unlabeled_csv(&write(dir.path(), "ok.csv", &text), Task::Ar1, &cfg).unwrap();
    assert_eq!(ok.len(), 2);
    assert_eq!(ok[0].dim(), (5, 3));

    let missing = write(dir.path(), "missing.csv", "country,year,passengers_diff,household_debt\nA,2005,0,0\n");
    let err = ingest_unlabeled_csv(&missing, Task::Ar1, &cfg).unwrap_err().to_string();
    assert!(err.contains("gdp_per_capita"), "{err}");

    let shuffled = format!("{AR1_HEADER}\nA,2006,0,0,0\nA,2005,0,0,0\nA,2007,0,0,0\n");
    let err = ingest_unlabeled_csv(&write(dir.path(), "s.csv", &shuffled), Task::Ar1, &cfg)
        .unwrap_err()
        .to_string();
    assert!(err.contains("row 3") && err.contains("year"), "{err}");

    let bad = format!("{AR1_HEADER}\nA,2005,0,x,0\nA,2006,0,0,0\n");
    let err = ingest_unlabeled_csv(&write(dir.path(), "b.csv", &bad), Task::Ar1, &cfg).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("household_debt"), "{err}");
}

#[test]
fn gaussian_csv_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.points = 2;
    let good = "observation,x0,x1\na,1,2\na,3,4\nb,0,0\nb,1,1\n";
    let obs = ingest_unlabeled_csv(&write(dir.path(), "g.csv", good), Task::Gaussian, &cfg).unwrap();
    assert_eq!(obs.len(), 2);
    assert_eq!(obs[0][[1, 0]], 3.0);

    let short = "observation,x0,x1\na,1,2\n";
    let err = ingest_unlabeled_csv(&write(dir.path(), "s.csv", short), Task::Gaussian, &cfg).unwrap_err();
    assert!(err.to_string().contains("expected K = 2"));

    let nan = "observation,x0,x1\na,1,NaN\na,1,1\n";
    let err = ingest_unlabeled_csv(&write(dir.path(), "n.csv", nan), Task::Gaussian, &cfg).unwrap_err();
    assert!(err.to_string().contains("row 2, column 'x1'"), "{err}");
}
