use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scabi::harness::{
    ar1_data, ar1_eval_set, evaluate, gaussian_eval_set, generate_figure_data, read_manifest, run_experiment,
    summarize_table, train_method, ExperimentConfig, Method, Task,
};
use scabi::metrics::{read_metrics_csv, write_metrics_csv, MetricRow};
use scabi::model_zoo::{write_ar1_csv, SimModel, SyntheticCountries};
use scabi::rng::SeedTree;
use scabi::training::{load_checkpoint, save_checkpoint, LabeledData, Snapshot};
use scabi::{Error, Result};

#[derive(Parser)]
#[command(name = "scabi", version, about = "Semi-supervised amortized Bayesian inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file (nested or flat dotted keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a preset: paper, desk, ar1, ar1-desk.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config field, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    task: Option<String>,
    /// First refit seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    refits: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated data: labeled Gaussian pairs or synthetic AR(1) countries.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of pairs (Gaussian) or countries (AR(1)).
        #[arg(long, short)]
        n: Option<usize>,
        /// Output CSV file.
        #[arg(long)]
        file: PathBuf,
    },
    /// Train one method for one seed and write its checkpoint and log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// npe or sc.
        #[arg(long, default_value = "sc")]
        method: String,
    },
    /// Evaluate a checkpoint against the oracle posteriors.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics CSV to write.
        #[arg(long)]
        file: PathBuf,
    },
    /// Summarize a results directory and emit figure data.
    Report {
        /// Results directory written by `reproduce`.
        results: PathBuf,
        /// contour, forest or all.
        #[arg(long, default_value = "all")]
        figure: String,
    },
    /// Run a full case study: normal-means, factors or ar1.
    Reproduce {
        case_study: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn parse_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

fn load_config(args: &ConfigArgs, default_preset: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::preset(args.preset.as_deref().unwrap_or(default_preset))?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg = scabi::harness::parse_config(&cfg, &text)?;
    }
    let mut patch = serde_json::Map::new();
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        patch.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    if let Some(t) = &args.task {
        patch.insert("task".into(), t.parse::<Task>()?.name().into());
    }
    if let Some(s) = args.seed {
        patch.insert("first_seed".into(), s.into());
    }
    if let Some(r) = args.refits {
        patch.insert("refits".into(), r.into());
    }
    if let Some(e) = args.epochs {
        patch.insert("train.epochs".into(), e.into());
    }
    if let Some(o) = &args.out {
        patch.insert("output_dir".into(), o.to_string_lossy().into_owned().into());
    }
    let cfg = scabi::harness::apply_patch(&cfg, serde_json::Value::Object(patch))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "npe" => Ok(Method::Npe),
        "sc" => Ok(Method::Sc),
        other => Err(Error::Config(format!("unknown method '{other}' (expected npe or sc)"))),
    }
}

fn simulate(cfg: &ExperimentConfig, n: Option<usize>, file: &Path) -> Result<()> {
    let tree = SeedTree::new(cfg.first_seed);
    match cfg.task {
        Task::Gaussian => {
            let model = cfg.gaussian_model();
            let n = n.unwrap_or(cfg.n_labeled);
            let data = LabeledData::simulate(&model, n, &mut tree.stream("labeled", &[]));
            let mut w = csv::Writer::from_path(file).map_err(Error::from)?;
            let mut header = vec!["observation".to_string()];
            header.extend((0..cfg.dim).map(|d| format!("theta{d}")));
            header.extend((0..cfg.dim).map(|d| format!("x{d}")));
            w.write_record(&header).map_err(Error::from)?;
            for (i, x) in data.observations.iter().enumerate() {
                for row in x.rows() {
                    let mut rec = vec![i.to_string()];
                    rec.extend(data.thetas.row(i).iter().map(|v| v.to_string()));
                    rec.extend(row.iter().map(|v| v.to_string()));
                    w.write_record(&rec).map_err(Error::from)?;
                }
            }
            w.flush()?;
            println!("wrote {n} labeled pairs to {}", file.display());
        }
        Task::Ar1 => {
            let model = scabi::model_zoo::Ar1Model::new(cfg.steps);
            let n = n.unwrap_or(cfg.countries);
            let synth = SyntheticCountries::generate(&model, n, cfg.first_year, &mut tree.stream("countries", &[]));
            write_ar1_csv(file, &synth.countries)?;
            println!("wrote {n} synthetic countries to {}", file.display());
        }
    }
    Ok(())
}

fn train_one(cfg: &ExperimentConfig, method: Method) -> Result<bool> {
    let seed = cfg.first_seed;
    let (data, model): (_, Box<dyn SimModel>) = match cfg.task {
        Task::Gaussian => (scabi::harness::gaussian_refit_data(cfg, seed)?, Box::new(cfg.gaussian_model())),
        Task::Ar1 => {
            let d = ar1_data(cfg)?;
            (scabi::harness::ar1_refit_data(cfg, &d, seed)?, Box::new(d.model))
        }
    };
    let out = train_method(cfg, &data, model.as_ref(), method)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    out.write_log(&cfg.output_dir.join("train_log.jsonl"))?;
    let ckpt = cfg.output_dir.join("checkpoint.json");
    save_checkpoint(
        &Snapshot {
            approximator: out.approximator,
            config: cfg.train_config(method, seed),
        },
        &ckpt,
    )?;
    if let Some(last) = out.log.last() {
        println!(
            "{} seed {seed}: {} epochs, final nll {:.4}, sc {:.4}, total {:.4}",
            method.name(),
            out.log.len(),
            last.loss.nll,
            last.loss.sc,
            last.loss.total
        );
    }
    println!("checkpoint: {}", ckpt.display());
    if let Some(reason) = out.aborted {
        eprintln!("training aborted: {reason}");
        return Ok(false);
    }
    Ok(true)
}

fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path, file: &Path) -> Result<()> {
    let snap = load_checkpoint(checkpoint)?;
    let seed = snap.config.seed;
    let (eval, names) = match cfg.task {
        Task::Gaussian => (gaussian_eval_set(cfg, seed), cfg.gaussian_model().param_names()),
        Task::Ar1 => {
            let d = ar1_data(cfg)?;
            (ar1_eval_set(cfg, &d)?, d.model.param_names())
        }
    };
    let (reports, _) = evaluate(&snap.approximator, &eval, cfg, seed)?;
    let method = if snap.config.lambda == 0.0 { "npe" } else { "sc" };
    let mut rows = Vec::new();
    for (label, r) in eval.labels.iter().zip(&reports) {
        println!("{label}: mmd {:.4}, mean |bias| {:.4}", r.mmd, mean(&r.mean_bias));
        for (j, name) in names.iter().enumerate() {
            rows.push(MetricRow {
                task: cfg.task.name().into(),
                factor: cfg.factor.clone(),
                value: cfg.value.clone(),
                method: method.into(),
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
    write_metrics_csv(file, &rows)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn report(dir: &Path, figure: &str) -> Result<()> {
    let manifest = read_manifest(dir)?;
    let rows = read_metrics_csv(&dir.join("metrics.csv"))?;
    println!("{} ({} refits, complete: {})", manifest.config.task.name(), manifest.seeds.len(), manifest.complete);
    match manifest.config.task {
        Task::Gaussian => {
            println!("{:>8} {:>6} {:>12} {:>12} {:>10}", "mu_obs", "method", "mean_bias", "sd_bias", "mmd");
            for mu in &manifest.config.mu_obs {
                let label = format!("{mu}");
                for method in ["npe", "sc"] {
                    let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.mu_obs == label && r.method == method).collect();
                    if sel.is_empty() {
                        continue;
                    }
                    let avg = |f: fn(&MetricRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
                    println!(
                        "{label:>8} {method:>6} {:>12.4} {:>12.4} {:>10.4}",
                        avg(|r| r.mean_bias),
                        avg(|r| r.sd_bias),
                        avg(|r| r.mmd)
                    );
                }
            }
        }
        Task::Ar1 => {
            let names = scabi::model_zoo::Ar1Model::new(1).param_names();
            println!("{:>10} {:>6} {:>12} {:>12} {:>12}", "param", "method", "mean_bias", "sd_bias", "W1");
            for r in summarize_table(&rows, &names) {
                println!(
                    "{:>10} {:>6} {:>12.4} {:>12.4} {:>12.4}",
                    r.param, r.method, r.mean_bias, r.sd_bias, r.wasserstein
                );
            }
        }
    }
    let figures: Vec<&str> = match figure {
        "all" if manifest.config.task == Task::Gaussian && manifest.config.dim == 2 => vec!["contour", "forest"],
        "all" => vec!["forest"],
        one => vec![one],
    };
    for f in figures {
        println!("figure data: {}", generate_figure_data(dir, f)?.display());
    }
    Ok(())
}

fn reproduce(case: &str, args: &ConfigArgs) -> Result<bool> {
    let (preset, factor) = match case {
        "normal-means" | "gaussian" => ("desk", None),
        "factors" => ("desk", Some(())),
        "ar1" | "air-traffic" => ("ar1-desk", None),
        other => {
            return Err(Error::Config(format!(
                "unknown case study '{other}' (expected normal-means, factors or ar1)"
            )))
        }
    };
    let base = load_config(args, preset)?;
    let mut ok = true;
    if factor.is_some() {
        let root = base.output_dir.clone();
        let mut sweeps: Vec<(&str, String, ExperimentConfig)> = Vec::new();
        for d in [2usize, 10] {
            sweeps.push(("D", d.to_string(), ExperimentConfig { dim: d, ..base.clone() }));
        }
        for m in [4usize, 32] {
            sweeps.push(("M", m.to_string(), ExperimentConfig { unlabeled: m, ..base.clone() }));
        }
        for mu in [1.0, 3.0] {
            sweeps.push(("mu_star", format!("{mu}"), ExperimentConfig { mu_star: mu, ..base.clone() }));
        }
        for (factor, value, mut cfg) in sweeps {
            cfg.factor = factor.into();
            cfg.value = value.clone();
            cfg.output_dir = root.join(format!("{factor}={value}"));
            let s = run_experiment(&cfg)?;
            println!("{factor}={value}: {} metric rows in {}", s.rows.len(), s.dir.display());
            ok &= s.aborted.is_empty();
        }
    } else {
        let s = run_experiment(&base)?;
        println!("{} metric rows in {}", s.rows.len(), s.dir.display());
        for a in &s.aborted {
            eprintln!("aborted: {a}");
        }
        ok = s.aborted.is_empty();
        report(&s.dir, "all")?;
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { cfg, n, file } => {
            simulate(&load_config(&cfg, "paper")?, n, &file)?;
            Ok(true)
        }
        Command::Train { cfg, method } => train_one(&load_config(&cfg, "paper")?, parse_method(&method)?),
        Command::Evaluate { cfg, checkpoint, file } => {
            evaluate_checkpoint(&load_config(&cfg, "paper")?, &checkpoint, &file)?;
            Ok(true)
        }
        Command::Report { results, figure } => {
            report(&results, &figure)?;
            Ok(true)
        }
        Command::Reproduce { case_study, cfg } => reproduce(&case_study, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
