//! Command-line front end: dataset generation, training, benchmarking,
//! density export, and self-verification, driven by a JSON config.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numerical divergence or
//! failed self-check. Commands never write outside their output directory
//! and are deterministic given flags, config, and input files.

pub mod config;

pub use config::{parse_loss_label, BudgetConfig, ExperimentConfig, CONFIG_VERSION};

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::lik::LossKind;
use crate::snapshot::ModelSnapshot;
use crate::synth::{gen_dataset, split_count, Dataset, NoiseKind};
use crate::trainer::{
    bench_suite, export_density_grid, train_run, BenchTable, ModelDensity, RunReport,
};

#[derive(Parser)]
#[command(
    name = "rle",
    version,
    about = "Residual log-likelihood regression on synthetic heteroscedastic benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV plus JSON sidecar).
    GenData {
        /// Noise family.
        #[arg(long, value_enum)]
        kind: NoiseKind,
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Generation seed.
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per the experiment config on a generated dataset.
    Train {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV (sidecar JSON expected alongside).
        #[arg(long)]
        data: PathBuf,
        /// Loss label override (default: first loss in the config).
        #[arg(long)]
        loss: Option<String>,
        /// Output directory override (default: the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full (seed x loss-kind) comparison table.
    Bench {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for parallel runs (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a trained model's standardized density on a uniform grid.
    Density {
        /// Model snapshot JSON.
        #[arg(long)]
        model: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Points per axis.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        /// Lower grid bound.
        #[arg(long, default_value_t = -8.0)]
        lower: f64,
        /// Upper grid bound.
        #[arg(long, default_value_t = 8.0)]
        upper: f64,
    },
    /// Run the numerical self-checks and print one line per check.
    Check {
        /// Seed for the random draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print check names without running them.
        #[arg(long)]
        list: bool,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                3
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData { kind, n, seed, out } => cmd_gen_data(kind, n, seed, &out),
        Command::Train {
            config,
            data,
            loss,
            out,
        } => cmd_train(&config, &data, loss.as_deref(), out.as_deref()),
        Command::Bench { config, jobs, out } => cmd_bench(&config, jobs, out.as_deref()),
        Command::Density {
            model,
            out,
            grid,
            lower,
            upper,
        } => cmd_density(&model, &out, grid, lower, upper),
        Command::Check { seed, list } => cmd_check(seed, list),
    }
}

fn cmd_gen_data(kind: NoiseKind, n: usize, seed: u64, out: &Path) -> Result<i32> {
    let ds = gen_dataset(kind, n, seed)?;
    let stem = format!("{}-n{}-seed{}", kind.label(), n, seed);
    let (csv_path, json_path) = ds.write_files(out, &stem)?;
    println!(
        "wrote {} samples of {} noise to {} (+ {})",
        n,
        kind.label(),
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn select_loss(cfg: &ExperimentConfig, label: Option<&str>) -> Result<LossKind> {
    match label {
        Some(l) => parse_loss_label(l, crate::synth::TARGET_DIM),
        None => Ok(cfg.losses[0].clone()),
    }
}

fn cmd_train(
    config_path: &Path,
    data_path: &Path,
    loss_label: Option<&str>,
    out_override: Option<&Path>,
) -> Result<i32> {
    let cfg = ExperimentConfig::load(config_path)?;
    let ds = Dataset::load_files(data_path)?;
    if ds.len() != cfg.n_train + cfg.n_test {
        return Err(Error::Config(format!(
            "dataset has {} rows, config wants n_train {} + n_test {}",
            ds.len(),
            cfg.n_train,
            cfg.n_test
        )));
    }
    let loss = select_loss(&cfg, loss_label)?;
    let seed = cfg.seeds[0];
    let (train, test) = split_count(&ds, cfg.n_train, seed)?;
    let train_cfg = cfg.budget.to_train_config(loss, seed);

    let (mut report, model) = train_run(&train_cfg, &train, &test)?;

    let out_dir = out_override.unwrap_or_else(|| Path::new(&cfg.out_dir));
    std::fs::create_dir_all(out_dir)?;
    let stem = format!("{}-seed{}", train_cfg.loss.label(), seed);

    let model_path = out_dir.join(format!("{stem}.model.json"));
    ModelSnapshot::from_model(&model).save(&model_path)?;
    report.snapshot_path = Some(format!("{stem}.model.json"));

    let report_path = out_dir.join(format!("{stem}.report.json"));
    write_json(&report_path, &report)?;

    let metrics_path = out_dir.join(format!("{stem}.metrics.csv"));
    write_metrics_csv(&metrics_path, &report)?;

    println!(
        "trained {} (seed {seed}) in {:.1}s: mae {:.5}, test_nll {:.5} -> {}",
        train_cfg.loss.label(),
        report.wall_seconds,
        report.final_metrics.mae,
        report.final_metrics.test_nll,
        report_path.display()
    );
    Ok(0)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One row per epoch: train loss always, metric columns filled at cadence
/// epochs and at the end.
fn write_metrics_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_loss",
        "mae",
        "test_nll",
        "pearson",
        "grid_kl",
        "flow_grid_mass",
    ])?;
    let epochs = report.train_loss.len();
    for (i, loss) in report.train_loss.iter().enumerate() {
        let epoch = i + 1;
        let metrics = if epoch == epochs {
            Some(&report.final_metrics)
        } else {
            report
                .evals
                .iter()
                .find(|e| e.epoch == epoch)
                .map(|e| &e.metrics)
        };
        let row = match metrics {
            Some(m) => [
                epoch.to_string(),
                format!("{loss}"),
                format!("{}", m.mae),
                format!("{}", m.test_nll),
                fmt_opt(m.pearson),
                fmt_opt(m.grid_kl),
                fmt_opt(m.flow_grid_mass),
            ],
            None => [
                epoch.to_string(),
                format!("{loss}"),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ],
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bench(config_path: &Path, jobs: Option<usize>, out_override: Option<&Path>) -> Result<i32> {
    let cfg = ExperimentConfig::load(config_path)?;
    let bench_cfg = cfg.to_bench_config();

    let table = match jobs {
        Some(j) if j > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| bench_suite(&bench_cfg))?
        }
        _ => bench_suite(&bench_cfg)?,
    };

    let out_dir = out_override.unwrap_or_else(|| Path::new(&cfg.out_dir));
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("bench.csv");
    write_bench_csv(&csv_path, &table)?;
    let summary_path = out_dir.join("bench_summary.json");
    write_json(&summary_path, &table)?;

    for s in &table.summaries {
        println!(
            "{:>14}: completed {} failed {} median mae {} nll {} pearson {}",
            s.kind,
            s.completed,
            s.failed,
            fmt_opt(s.median_mae),
            fmt_opt(s.median_test_nll),
            fmt_opt(s.median_pearson),
        );
    }
    println!(
        "verdicts: mae_ladder_ok={:?} rle_nll_le_dle={:?} -> {}",
        table.verdicts.mae_ladder_ok,
        table.verdicts.rle_nll_le_dle,
        summary_path.display()
    );
    Ok(0)
}

/// Run rows first, then one summary row per kind, sharing one wide header.
fn write_bench_csv(path: &Path, table: &BenchTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "row_type",
        "kind",
        "seed",
        "ok",
        "final_train_loss",
        "mae",
        "test_nll",
        "pearson",
        "grid_kl",
        "flow_grid_mass",
        "error",
        "completed",
        "failed",
        "median_mae",
        "mae_min",
        "mae_max",
        "median_test_nll",
        "median_pearson",
        "median_grid_kl",
        "median_flow_grid_mass",
    ])?;
    for r in &table.runs {
        w.write_record([
            "run".to_string(),
            r.kind.clone(),
            r.seed.to_string(),
            r.ok.to_string(),
            fmt_opt(r.final_train_loss),
            fmt_opt(r.mae),
            fmt_opt(r.test_nll),
            fmt_opt(r.pearson),
            fmt_opt(r.grid_kl),
            fmt_opt(r.flow_grid_mass),
            r.error.clone().unwrap_or_default(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    for s in &table.summaries {
        w.write_record([
            "summary".to_string(),
            s.kind.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            s.completed.to_string(),
            s.failed.to_string(),
            fmt_opt(s.median_mae),
            fmt_opt(s.mae_min),
            fmt_opt(s.mae_max),
            fmt_opt(s.median_test_nll),
            fmt_opt(s.median_pearson),
            fmt_opt(s.median_grid_kl),
            fmt_opt(s.median_flow_grid_mass),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_density(model_path: &Path, out: &Path, grid: usize, lower: f64, upper: f64) -> Result<i32> {
    let snapshot = ModelSnapshot::load(model_path)?;
    let model = snapshot.into_model()?;
    let spec = GridSpec::new(lower, upper, grid)?;

    // For the residual kind the export includes the exact log normalizer so
    // the grid re-integrates to one.
    let density = match &model.kind {
        LossKind::Rle { q, riemann, .. } => {
            let flow = model.flow.as_ref().expect("validated by into_model");
            let log_s = crate::lik::compute_s(flow, q, riemann)?.ln();
            ModelDensity::ResidualFlow {
                flow,
                q: *q,
                log_s,
            }
        }
        kind => ModelDensity::for_kind(kind, model.flow.as_ref(), crate::synth::TARGET_DIM)?,
    };
    let rows = export_density_grid(&density, &spec)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["x1", "x2", "log_density"])?;
    for (x1, x2, lp) in &rows {
        w.write_record([format!("{x1}"), format!("{x2}"), format!("{lp}")])?;
    }
    w.flush()?;
    println!("wrote {} density rows to {}", rows.len(), out.display());
    Ok(0)
}

fn cmd_check(seed: u64, list: bool) -> Result<i32> {
    if list {
        for name in crate::verify::check_names() {
            println!("{name}");
        }
        return Ok(0);
    }
    let outcomes = crate::verify::run_all(seed);
    let mut failures = 0;
    for o in &outcomes {
        if o.passed {
            println!("PASS {}: {}", o.name, o.detail);
        } else {
            println!("FAIL {}: {}", o.name, o.detail);
            failures += 1;
        }
    }
    if failures == 0 {
        println!("all {} checks passed (seed {seed})", outcomes.len());
        Ok(0)
    } else {
        eprintln!("{failures} of {} checks failed", outcomes.len());
        Ok(3)
    }
}
