//! The benchmark suite: one training run per (seed, loss kind) on paired
//! data, per-kind summaries, and the ordering verdicts the loss-ladder
//! comparisons rest on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lik::LossKind;
use crate::synth::{gen_dataset, split_count, NoiseKind};
use crate::trainer::{train_run, TrainConfig};

/// What to sweep: loss kinds crossed with seeds on one noise family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub noise: NoiseKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub kinds: Vec<LossKind>,
    /// Budget template; `loss` and `seed` are overridden per run.
    pub train: TrainConfig,
}

/// One run's record. Diverged runs are first-class rows, not silently
/// dropped; their metric cells stay empty and `error` carries the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub seed: u64,
    pub ok: bool,
    pub final_train_loss: Option<f64>,
    pub mae: Option<f64>,
    pub test_nll: Option<f64>,
    pub pearson: Option<f64>,
    pub grid_kl: Option<f64>,
    pub flow_grid_mass: Option<f64>,
    pub error: Option<String>,
}

/// Median and spread per kind over completed runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: String,
    pub completed: usize,
    pub failed: usize,
    pub median_mae: Option<f64>,
    pub mae_min: Option<f64>,
    pub mae_max: Option<f64>,
    pub median_test_nll: Option<f64>,
    pub median_pearson: Option<f64>,
    pub median_grid_kl: Option<f64>,
    pub median_flow_grid_mass: Option<f64>,
}

/// Ordering verdicts over kind medians; present only when the relevant
/// kinds completed and at least three seeds ran.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchVerdicts {
    /// Median test MAE satisfies rle <= laplace_nll <= gaussian_nll <= l2_const.
    pub mae_ladder_ok: Option<bool>,
    /// Median test NLL of rle <= dle.
    pub rle_nll_le_dle: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTable {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<KindSummary>,
    pub verdicts: BenchVerdicts,
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn summarize(kind_label: &str, runs: &[RunRecord]) -> KindSummary {
    let rows: Vec<&RunRecord> = runs.iter().filter(|r| r.kind == kind_label).collect();
    let completed = rows.iter().filter(|r| r.ok).count();
    let failed = rows.len() - completed;
    let collect = |f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter(|r| r.ok).filter_map(|r| f(r)).collect()
    };
    let mut maes = collect(|r| r.mae);
    let mae_min = maes.iter().copied().reduce(f64::min);
    let mae_max = maes.iter().copied().reduce(f64::max);
    KindSummary {
        kind: kind_label.to_string(),
        completed,
        failed,
        median_mae: median(&mut maes),
        mae_min,
        mae_max,
        median_test_nll: median(&mut collect(|r| r.test_nll)),
        median_pearson: median(&mut collect(|r| r.pearson)),
        median_grid_kl: median(&mut collect(|r| r.grid_kl)),
        median_flow_grid_mass: median(&mut collect(|r| r.flow_grid_mass)),
    }
}

fn find_median_mae(summaries: &[KindSummary], label: &str) -> Option<f64> {
    summaries
        .iter()
        .find(|s| s.kind == label)
        .and_then(|s| s.median_mae)
}

fn find_median_nll(summaries: &[KindSummary], label: &str) -> Option<f64> {
    summaries
        .iter()
        .find(|s| s.kind == label)
        .and_then(|s| s.median_test_nll)
}

fn rle_label(summaries: &[KindSummary]) -> Option<&str> {
    for label in ["rle_laplace", "rle_gaussian"] {
        if summaries.iter().any(|s| s.kind == label) {
            return Some(label);
        }
    }
    None
}

fn compute_verdicts(summaries: &[KindSummary], n_seeds: usize) -> BenchVerdicts {
    // Ordering claims need at least three seeds to be worth stating.
    if n_seeds < 3 {
        return BenchVerdicts {
            mae_ladder_ok: None,
            rle_nll_le_dle: None,
        };
    }
    let rle = rle_label(summaries);
    let mae_ladder_ok = rle.and_then(|rle| {
        let chain = [
            find_median_mae(summaries, rle)?,
            find_median_mae(summaries, "laplace_nll")?,
            find_median_mae(summaries, "gaussian_nll")?,
            find_median_mae(summaries, "l2_const")?,
        ];
        Some(chain.windows(2).all(|w| w[0] <= w[1]))
    });
    let rle_nll_le_dle = rle.and_then(|rle| {
        let r = find_median_nll(summaries, rle)?;
        let d = find_median_nll(summaries, "dle")?;
        Some(r <= d)
    });
    BenchVerdicts {
        mae_ladder_ok,
        rle_nll_le_dle,
    }
}

/// Run the full sweep. Runs execute in parallel; record order is the
/// deterministic (kind, seed) cross product. Data is paired: every kind at
/// a given seed trains and tests on the identical split.
pub fn bench_suite(cfg: &BenchConfig) -> Result<BenchTable> {
    if cfg.seeds.is_empty() || cfg.kinds.is_empty() {
        return Err(Error::Config("bench needs at least one seed and one kind".into()));
    }
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("bench needs nonzero train and test sizes".into()));
    }
    cfg.train.validate()?;

    let mut jobs = Vec::new();
    for kind in &cfg.kinds {
        for &seed in &cfg.seeds {
            jobs.push((kind.clone(), seed));
        }
    }

    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|(kind, seed)| -> Result<RunRecord> {
            let label = kind.label();
            let ds = gen_dataset(cfg.noise, cfg.n_train + cfg.n_test, *seed)?;
            let (train, test) = split_count(&ds, cfg.n_train, *seed)?;
            let mut tc = cfg.train.clone();
            tc.loss = kind.clone();
            tc.seed = *seed;
            match train_run(&tc, &train, &test) {
                Ok((report, _model)) => Ok(RunRecord {
                    kind: label,
                    seed: *seed,
                    ok: true,
                    final_train_loss: report.train_loss.last().copied(),
                    mae: Some(report.final_metrics.mae),
                    test_nll: Some(report.final_metrics.test_nll),
                    pearson: report.final_metrics.pearson,
                    grid_kl: report.final_metrics.grid_kl,
                    flow_grid_mass: report.final_metrics.flow_grid_mass,
                    error: None,
                }),
                Err(e) if e.is_divergence() => Ok(RunRecord {
                    kind: label,
                    seed: *seed,
                    ok: false,
                    final_train_loss: None,
                    mae: None,
                    test_nll: None,
                    pearson: None,
                    grid_kl: None,
                    flow_grid_mass: None,
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::with_capacity(cfg.kinds.len());
    for kind in &cfg.kinds {
        summaries.push(summarize(&kind.label(), &runs));
    }
    let verdicts = compute_verdicts(&summaries, cfg.seeds.len());

    Ok(BenchTable {
        runs,
        summaries,
        verdicts,
    })
}
