//! End-to-end residual log-likelihood training on a heteroscedastic
//! Laplace-noise benchmark: location error, held-out likelihood, and the
//! correlation between the predicted confidence and the per-sample error.
//!
//! Run with: `cargo run --release --example train_rle [n_epochs]`

use rle::lik::{confidence, BaseDensity, LossKind};
use rle::synth::{gen_dataset, split_count, NoiseKind};
use rle::trainer::{train_run, TrainConfig};

fn main() -> rle::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(150);

    let ds = gen_dataset(NoiseKind::LaplaceHetero, 3000, 0)?;
    let (train, test) = split_count(&ds, 2000, 0)?;

    // Scale-head headroom: with the dropped-normalizer objective the
    // scales drift upward as the flow converges, and a tight sigma_max
    // saturates the sigmoid and flattens the confidence signal.
    let cfg = TrainConfig {
        loss: LossKind::rle(BaseDensity::laplace(2)),
        epochs,
        sigma_max: 4.0,
        eval_every: epochs / 4,
        ..TrainConfig::default()
    };
    println!(
        "training {} for {epochs} epochs on {} train / {} test samples...",
        cfg.loss.label(),
        train.len(),
        test.len()
    );
    let (report, model) = train_run(&cfg, &train, &test)?;

    println!("finished in {:.1}s", report.wall_seconds);
    println!(
        "train loss: first {:.4} -> last {:.4}",
        report.train_loss.first().unwrap(),
        report.train_loss.last().unwrap()
    );
    for e in &report.evals {
        println!(
            "  epoch {:>4}: mae {:.5}  test_nll {:.4}",
            e.epoch, e.metrics.mae, e.metrics.test_nll
        );
    }
    let m = &report.final_metrics;
    println!("final: mae {:.5}  test_nll {:.4}", m.mae, m.test_nll);
    println!("  pearson(confidence, -per-sample mae) = {:?}", m.pearson);
    println!("  grid KL(true || learned)             = {:?}", m.grid_kl);
    println!("  flow density grid mass               = {:?}", m.flow_grid_mass);

    // Inference is head-only: the flow never runs at test time.
    let pred = model.head.forward(test.features.row(0))?;
    println!(
        "sample prediction: mu_hat = [{:.4}, {:.4}], sigma_hat = [{:.4}, {:.4}], confidence = {:.4}",
        pred.mu_hat[0],
        pred.mu_hat[1],
        pred.sigma_hat[0],
        pred.sigma_hat[1],
        confidence(&pred.sigma_hat, model.head.sigma_max())?
    );
    Ok(())
}
