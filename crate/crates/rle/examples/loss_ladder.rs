//! Compare the whole ladder of objectives on one heteroscedastic benchmark:
//! constant-variance l2/l1, Gaussian and Laplace NLL with learned scales,
//! direct likelihood estimation, and residual log-likelihood estimation.
//!
//! Run with: `cargo run --release --example loss_ladder [n_epochs] [n_seeds]`

use rle::lik::{BaseDensity, LossKind};
use rle::synth::NoiseKind;
use rle::trainer::{bench_suite, BenchConfig, TrainConfig};

fn main() -> rle::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(25);
    let n_seeds: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);

    // Short budgets keep the flow in the regime where the residual
    // objective's ordering advantage is visible; see the acceptance suite.
    let cfg = BenchConfig {
        noise: NoiseKind::LaplaceHetero,
        n_train: 1000,
        n_test: 500,
        seeds: (0..n_seeds).collect(),
        kinds: vec![
            LossKind::L2Const,
            LossKind::L1Const,
            LossKind::GaussianNll,
            LossKind::LaplaceNll,
            LossKind::Dle,
            LossKind::rle(BaseDensity::laplace(2)),
        ],
        train: TrainConfig {
            epochs,
            eval_every: 0,
            ..TrainConfig::default()
        },
    };
    println!(
        "bench: {} noise, {} kinds x {} seeds, {epochs} epochs each",
        cfg.noise.label(),
        cfg.kinds.len(),
        cfg.seeds.len()
    );
    let started = std::time::Instant::now();
    let table = bench_suite(&cfg)?;
    println!("done in {:.0}s\n", started.elapsed().as_secs_f64());

    println!(
        "{:>14} {:>5} {:>10} {:>10} {:>9} {:>9}",
        "kind", "runs", "med mae", "med nll", "pearson", "grid kl"
    );
    for s in &table.summaries {
        println!(
            "{:>14} {:>2}/{:<2} {:>10.5} {:>10.4} {:>9} {:>9}",
            s.kind,
            s.completed,
            s.completed + s.failed,
            s.median_mae.unwrap_or(f64::NAN),
            s.median_test_nll.unwrap_or(f64::NAN),
            s.median_pearson.map_or("-".into(), |v| format!("{v:.3}")),
            s.median_grid_kl.map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    println!(
        "\nmae ladder (rle <= laplace <= gaussian <= l2): {:?}",
        table.verdicts.mae_ladder_ok
    );
    println!("rle nll <= dle: {:?}", table.verdicts.rle_nll_le_dle);
    Ok(())
}
