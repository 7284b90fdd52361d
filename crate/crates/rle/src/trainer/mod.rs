//! End-to-end training (regression head plus flow, jointly optimized with
//! Adam over one flat parameter vector), evaluation, direct density fitting,
//! and the benchmark suite.

pub mod bench;
pub mod metrics;

pub use bench::{bench_suite, BenchConfig, BenchTable, BenchVerdicts, KindSummary, RunRecord};
pub use metrics::{
    eval_metrics, export_density_grid, flow_normalization_mass, kl_grid, normalization_grid,
    pearson, MetricsRecord, ModelDensity,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowArch, FlowModel};
use crate::lik::LossKind;
use crate::numcore::{AdamState, Tensor2};
use crate::regress::{model_grad, RegressionHead, TrunkArch};
use crate::synth::Dataset;

/// One training run's configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub sigma_max: f64,
    pub flow_arch: FlowArch,
    pub trunk_arch: TrunkArch,
    /// Evaluate on the test set every this many epochs (0 = final only).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::rle(crate::lik::BaseDensity::laplace(2)),
            epochs: 500,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            sigma_max: 1.0,
            flow_arch: FlowArch::default(),
            trunk_arch: TrunkArch::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.sigma_max > 0.0) {
            return Err(Error::Config("sigma_max must be > 0".into()));
        }
        Ok(())
    }
}

/// The trained model a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub head: RegressionHead,
    pub flow: Option<FlowModel>,
    pub kind: LossKind,
}

/// Metrics recorded at an evaluation cadence point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub metrics: MetricsRecord,
}

/// Everything a run reports. Wall-clock time is informational only and
/// excluded from serialization so identical configs reproduce identical
/// report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    /// Per-epoch mean training loss; length equals `epochs`.
    pub train_loss: Vec<f64>,
    pub evals: Vec<EpochEval>,
    pub final_metrics: MetricsRecord,
    /// Path of the written model snapshot, when one was saved.
    pub snapshot_path: Option<String>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

fn gather_rows(t: &Tensor2, idx: &[usize]) -> Tensor2 {
    let mut data = Vec::with_capacity(idx.len() * t.cols());
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor2::from_vec(idx.len(), t.cols(), data).expect("gather preserves shape")
}

/// Train per the configuration: seeded init (head first, then flow when the
/// kind needs one), shuffled mini-batches, Adam on the joint parameter
/// vector, metric evaluation at cadence and at the end. Deterministic given
/// the config and data, including rng consumption order.
pub fn train_run(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(RunReport, TrainedModel)> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let feature_dim = train.features.cols();
    let out_dim = train.targets.cols();
    if test.features.cols() != feature_dim || test.targets.cols() != out_dim {
        return Err(Error::Shape("train/test dimensions disagree".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut head = RegressionHead::init(&mut rng, feature_dim, out_dim, &cfg.trunk_arch, cfg.sigma_max)?;
    let mut flow = if cfg.loss.needs_flow() {
        Some(FlowModel::zero_init(&mut rng, out_dim, &cfg.flow_arch)?)
    } else {
        None
    };

    let head_len = head.param_count();
    let mut params = head.to_flat();
    if let Some(f) = &flow {
        params.extend(f.to_flat());
    }
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);

    let n = train.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut evals = Vec::new();

    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let features = gather_rows(&train.features, chunk);
            let targets = gather_rows(&train.targets, chunk);
            let grads = model_grad(&head, flow.as_ref(), &cfg.loss, &features, &targets)
                .map_err(|e| promote_divergence(e, epoch, batch_idx))?;
            if !grads.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("batch loss is {}", grads.loss),
                });
            }
            epoch_loss += grads.loss * chunk.len() as f64;

            let mut joint = grads.d_head;
            joint.extend(grads.d_flow);
            adam.step(&mut params, &joint)
                .map_err(|e| promote_divergence(e, epoch, batch_idx))?;
            head.set_from_flat(&params[..head_len])?;
            if let Some(f) = flow.as_mut() {
                f.set_from_flat(&params[head_len..])?;
            }
        }
        train_loss.push(epoch_loss / n as f64);

        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && epoch < cfg.epochs {
            let metrics = eval_run_metrics(&head, flow.as_ref(), test, &cfg.loss)?;
            evals.push(EpochEval { epoch, metrics });
        }
    }

    let mut final_metrics = eval_run_metrics(&head, flow.as_ref(), test, &cfg.loss)?;
    if let Some(f) = &flow {
        final_metrics.flow_grid_mass =
            Some(flow_normalization_mass(f, &normalization_grid())?);
    }

    let report = RunReport {
        config: cfg.clone(),
        train_loss,
        evals,
        final_metrics,
        snapshot_path: None,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let model = TrainedModel {
        head,
        flow,
        kind: cfg.loss.clone(),
    };
    Ok((report, model))
}

/// Test metrics; for the residual kind the reported NLL includes the log
/// normalizer (computed once per evaluation) so the value is a comparable
/// likelihood across kinds whether or not training carried the term.
fn eval_run_metrics(
    head: &RegressionHead,
    flow: Option<&FlowModel>,
    test: &Dataset,
    kind: &LossKind,
) -> Result<MetricsRecord> {
    if let LossKind::Rle { q, riemann, .. } = kind {
        let flow_ref = flow.ok_or_else(|| Error::Config("rle eval needs a flow".into()))?;
        let s_free = LossKind::rle(*q);
        let mut metrics = eval_metrics(head, flow, test, &s_free)?;
        metrics.test_nll -= crate::lik::compute_s(flow_ref, q, riemann)?.ln();
        Ok(metrics)
    } else {
        eval_metrics(head, flow, test, kind)
    }
}

fn promote_divergence(e: Error, epoch: usize, batch: usize) -> Error {
    // A scale collapsing through its clamp floor mid-run is a numerical
    // blow-up of the optimization, not an API misuse.
    if e.is_divergence() || matches!(e, Error::SigmaOutOfRange(_)) {
        Error::Diverged {
            epoch,
            batch,
            detail: e.to_string(),
        }
    } else {
        e
    }
}

/// Configuration for a direct flow density fit on raw sample vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityFitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DensityFitConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Maximum-likelihood fit of a flow to raw samples: minimizes the mean of
/// `-log_prob(x)` with Adam, starting from the identity-initialised flow.
pub fn fit_flow_density(
    samples: &Tensor2,
    arch: &FlowArch,
    cfg: &DensityFitConfig,
) -> Result<FlowModel> {
    if samples.rows() == 0 {
        return Err(Error::Empty("density fit needs samples".into()));
    }
    let dim = samples.cols();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut flow = FlowModel::zero_init(&mut rng, dim, arch)?;
    let mut params = flow.to_flat();
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);

    let n = samples.rows();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for &i in chunk {
                let g = flow
                    .log_prob_with_grad(samples.row(i))
                    .map_err(|e| promote_divergence(e, epoch, batch_idx))?;
                loss -= g.log_prob;
                for (acc, d) in grad.iter_mut().zip(&g.grad_params) {
                    *acc -= d;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            if !(loss * scale).is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("density-fit loss is {}", loss * scale),
                });
            }
            adam.step(&mut params, &grad)
                .map_err(|e| promote_divergence(e, epoch, batch_idx))?;
            flow.set_from_flat(&params)?;
        }
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lik::BaseDensity;
    use crate::synth::{gen_dataset, split_count, NoiseKind};

    fn tiny_cfg(loss: LossKind) -> TrainConfig {
        TrainConfig {
            loss,
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 7,
            sigma_max: 1.0,
            flow_arch: FlowArch {
                blocks: 2,
                layers: 2,
                width: 8,
            },
            trunk_arch: TrunkArch {
                layers: 2,
                width: 8,
            },
            eval_every: 0,
        }
    }

    #[test]
    fn loss_series_length_equals_epochs() {
        let ds = gen_dataset(NoiseKind::GaussianHetero, 96, 5).unwrap();
        let (train, test) = split_count(&ds, 64, 5).unwrap();
        let (report, model) = train_run(&tiny_cfg(LossKind::GaussianNll), &train, &test).unwrap();
        assert_eq!(report.train_loss.len(), 3);
        assert!(model.flow.is_none());
        assert!(report.final_metrics.mae.is_finite());
    }

    #[test]
    fn one_epoch_full_batch_is_one_adam_step() {
        let ds = gen_dataset(NoiseKind::GaussianHetero, 80, 3).unwrap();
        let (train, test) = split_count(&ds, 64, 3).unwrap();
        let mut cfg = tiny_cfg(LossKind::GaussianNll);
        cfg.epochs = 1;
        cfg.batch_size = train.len();
        let (_, model) = train_run(&cfg, &train, &test).unwrap();

        // Replay: same seeded init, one manual gradient step.
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut head =
            RegressionHead::init(&mut rng, 2, 2, &cfg.trunk_arch, cfg.sigma_max).unwrap();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let features = gather_rows(&train.features, &order);
        let targets = gather_rows(&train.targets, &order);
        let grads = model_grad(&head, None, &cfg.loss, &features, &targets).unwrap();
        let mut params = head.to_flat();
        let mut adam = AdamState::new(params.len(), cfg.learning_rate);
        adam.step(&mut params, &grads.d_head).unwrap();
        head.set_from_flat(&params).unwrap();

        assert_eq!(model.head, head);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let ds = gen_dataset(NoiseKind::LaplaceHetero, 128, 1).unwrap();
        let (train, test) = split_count(&ds, 96, 1).unwrap();
        let cfg = tiny_cfg(LossKind::rle(BaseDensity::laplace(2)));
        let (r1, m1) = train_run(&cfg, &train, &test).unwrap();
        let (r2, m2) = train_run(&cfg, &train, &test).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn noise_free_l2_converges() {
        let train = gen_dataset(NoiseKind::NoiseFree, 2000, 2).unwrap();
        let test = gen_dataset(NoiseKind::NoiseFree, 64, 3).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::L2Const,
            epochs: 200,
            batch_size: 128,
            seed: 0,
            ..TrainConfig::default()
        };
        let (report, model) = train_run(&cfg, &train, &test).unwrap();
        // Train loss is eventually decreasing: compare trailing medians.
        let series = &report.train_loss;
        let mid = series.len() / 2;
        let median = |s: &[f64]| {
            let mut v = s.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        assert!(median(&series[mid..]) < median(&series[..mid]));
        let on_train = eval_metrics(&model.head, None, &train, &cfg.loss).unwrap();
        assert!(on_train.mae < 1e-2, "final train MAE {}", on_train.mae);
    }

    #[test]
    fn eval_cadence_records_intermediate_metrics() {
        let ds = gen_dataset(NoiseKind::GaussianHetero, 96, 4).unwrap();
        let (train, test) = split_count(&ds, 64, 4).unwrap();
        let mut cfg = tiny_cfg(LossKind::GaussianNll);
        cfg.epochs = 4;
        cfg.eval_every = 2;
        let (report, _) = train_run(&cfg, &train, &test).unwrap();
        assert_eq!(report.evals.len(), 1);
        assert_eq!(report.evals[0].epoch, 2);
    }

    #[test]
    fn density_fit_improves_over_base() {
        use crate::grid::{eval_log_grid, grid_kl};
        use crate::lik::{LogDensity, StdNormal};
        let samples = crate::synth::gen_noise(NoiseKind::LaplaceHetero, 4000, 11);
        let arch = FlowArch {
            blocks: 4,
            layers: 3,
            width: 16,
        };
        // The fit spends its first few hundred steps leaving the identity
        // plateau, then converges quickly; 60 epochs is past the knee.
        let cfg = DensityFitConfig {
            epochs: 60,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        };
        let flow = fit_flow_density(&samples, &arch, &cfg).unwrap();
        let spec = crate::grid::GridSpec::new(-8.0, 8.0, 100).unwrap();
        let log_true = eval_log_grid(
            |p| crate::synth::true_noise_log_density(NoiseKind::LaplaceHetero, p),
            &spec,
        )
        .unwrap();
        let base = StdNormal { dim: 2 };
        let log_base = eval_log_grid(|p| base.log_density(p), &spec).unwrap();
        let log_fit = eval_log_grid(|p| flow.log_prob(p), &spec).unwrap();
        let kl_base = grid_kl(&log_true, &log_base).unwrap();
        let kl_fit = grid_kl(&log_true, &log_fit).unwrap();
        assert!(kl_fit < kl_base, "fit {kl_fit} vs base {kl_base}");
    }
}
