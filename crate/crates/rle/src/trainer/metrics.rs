//! Test-time metrics: MAE, held-out NLL, confidence/error correlation, and
//! the grid KL between the true standardized noise density and the model's
//! learned standardized density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::grid::{eval_log_grid, grid_kl, grid_mass, GridSpec};
use crate::lik::{confidence, loss_value, BaseDensity, LogDensity, LossKind};
use crate::regress::RegressionHead;
use crate::synth::{true_noise_log_density, Dataset, NoiseKind};

/// Grid used for KL comparisons of standardized densities.
pub fn kl_grid() -> GridSpec {
    GridSpec {
        lower: -8.0,
        upper: 8.0,
        per_dim: 200,
    }
}

/// Grid pinned for density-normalization checks.
pub fn normalization_grid() -> GridSpec {
    GridSpec {
        lower: -8.0,
        upper: 8.0,
        per_dim: 400,
    }
}

/// The standardized density a trained model believes in; what grid KL and
/// density export evaluate.
pub enum ModelDensity<'a> {
    /// DLE: the flow is the whole standardized density.
    Flow(&'a FlowModel),
    /// RLE: base times flow-learned residual, plus the log normalizer.
    ResidualFlow {
        flow: &'a FlowModel,
        q: BaseDensity,
        log_s: f64,
    },
    /// Parametric kinds: the unit-scale family density.
    Parametric(BaseDensity),
}

impl ModelDensity<'_> {
    /// The density the given trained kind defines over standardized
    /// residuals. For RLE the normalizer defaults to zero here; grid KL
    /// renormalizes over the grid, so only exports need the exact value.
    pub fn for_kind<'a>(
        kind: &LossKind,
        flow: Option<&'a FlowModel>,
        dim: usize,
    ) -> Result<ModelDensity<'a>> {
        Ok(match kind {
            LossKind::L2Const | LossKind::GaussianNll => {
                ModelDensity::Parametric(BaseDensity::gaussian(dim))
            }
            LossKind::L1Const | LossKind::LaplaceNll => {
                ModelDensity::Parametric(BaseDensity::laplace(dim))
            }
            LossKind::Dle => ModelDensity::Flow(
                flow.ok_or_else(|| Error::Config("dle density needs a flow".into()))?,
            ),
            LossKind::Rle { q, .. } => ModelDensity::ResidualFlow {
                flow: flow.ok_or_else(|| Error::Config("rle density needs a flow".into()))?,
                q: *q,
                log_s: 0.0,
            },
        })
    }
}

impl LogDensity for ModelDensity<'_> {
    fn dim(&self) -> usize {
        match self {
            ModelDensity::Flow(f) => f.dim(),
            ModelDensity::ResidualFlow { flow, .. } => flow.dim(),
            ModelDensity::Parametric(q) => q.dim,
        }
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            ModelDensity::Flow(f) => f.log_prob(x),
            ModelDensity::ResidualFlow { flow, q, log_s } => {
                Ok(q.log_prob(x)? + flow.log_prob(x)? + log_s)
            }
            ModelDensity::Parametric(q) => q.log_prob(x),
        }
    }
}

/// Pearson correlation; `None` when either series is constant or shorter
/// than two entries.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Metrics of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Mean over samples of the per-sample mean absolute location error.
    pub mae: f64,
    /// Mean trained-kind loss on the test set.
    pub test_nll: f64,
    /// Correlation of confidence with negative per-sample MAE; absent when
    /// either series is constant.
    pub pearson: Option<f64>,
    /// KL(true noise density || learned standardized density) by grid
    /// quadrature; absent for noise-free data.
    pub grid_kl: Option<f64>,
    /// Grid mass of exp(flow log-density); filled after training for flow
    /// kinds as a normalization diagnostic.
    pub flow_grid_mass: Option<f64>,
}

/// Evaluate a trained model on held-out data.
pub fn eval_metrics(
    head: &RegressionHead,
    flow: Option<&FlowModel>,
    test: &Dataset,
    kind: &LossKind,
) -> Result<MetricsRecord> {
    let n = test.len();
    if n < 2 {
        return Err(Error::Empty(format!(
            "metrics need at least 2 test rows, got {n}"
        )));
    }
    let d = test.targets.cols();
    let mut per_sample_mae = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    let mut nll_sum = 0.0;
    for r in 0..n {
        let pred = head.forward(test.features.row(r))?;
        let target = test.targets.row(r);
        let mae_r = pred
            .mu_hat
            .iter()
            .zip(target)
            .map(|(m, g)| (m - g).abs())
            .sum::<f64>()
            / d as f64;
        per_sample_mae.push(mae_r);
        confidences.push(confidence(&pred.sigma_hat, head.sigma_max())?);
        nll_sum += loss_value(kind, flow, target, &pred.mu_hat, &pred.sigma_hat)?;
    }
    let mae = per_sample_mae.iter().sum::<f64>() / n as f64;
    let test_nll = nll_sum / n as f64;
    let neg_mae: Vec<f64> = per_sample_mae.iter().map(|&v| -v).collect();
    let pearson = pearson(&confidences, &neg_mae);

    let grid_kl_value = if test.noise == NoiseKind::NoiseFree {
        None
    } else {
        let spec = kl_grid();
        let learned = ModelDensity::for_kind(kind, flow, d)?;
        let log_true = eval_log_grid(|p| true_noise_log_density(test.noise, p), &spec)?;
        let log_learned = eval_log_grid(|p| learned.log_density(p), &spec)?;
        Some(grid_kl(&log_true, &log_learned)?)
    };

    Ok(MetricsRecord {
        mae,
        test_nll,
        pearson,
        grid_kl: grid_kl_value,
        flow_grid_mass: None,
    })
}

/// Grid mass of the flow's own density; near 1 for a healthy flow.
pub fn flow_normalization_mass(flow: &FlowModel, spec: &GridSpec) -> Result<f64> {
    if flow.dim() != 2 {
        return Err(Error::Quadrature("normalization mass needs a 2-D flow".into()));
    }
    let values = eval_log_grid(|p| flow.log_prob(p), spec)?;
    Ok(grid_mass(&values, spec))
}

/// Row-major table of (x1, x2, log density) at the cell centers of `spec`.
pub fn export_density_grid(
    density: &ModelDensity<'_>,
    spec: &GridSpec,
) -> Result<Vec<(f64, f64, f64)>> {
    if density.dim() != 2 {
        return Err(Error::Quadrature("density export needs 2 dimensions".into()));
    }
    let values = eval_log_grid(|p| density.log_density(p), spec)?;
    Ok(spec
        .points()
        .into_iter()
        .zip(values)
        .map(|(p, lp)| (p[0], p[1], lp))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowArch;
    use crate::numcore::{LinearLayer, MlpParams, Tensor2};
    use crate::regress::TrunkArch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_definition() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0], &[2.0]), None);
    }

    #[test]
    fn perfect_predictor_has_zero_mae() {
        // Head with zero trunk and constant mu bias on a dataset whose
        // targets equal that bias exactly.
        let trunk = MlpParams::new(
            vec![LinearLayer::zeros(4, 2)],
            0.01,
        )
        .unwrap();
        let mu = LinearLayer::new(Tensor2::zeros(2, 4), vec![0.3, -0.4]).unwrap();
        let sigma = LinearLayer::new(
            Tensor2::from_fn(2, 4, |r, c| if c == r { 1.0 } else { 0.5 }),
            vec![0.1, -0.2],
        )
        .unwrap();
        let head = RegressionHead::new(trunk, mu, sigma, 1.0).unwrap();

        let n = 16;
        let features = Tensor2::from_fn(n, 2, |r, c| (r + c) as f64 * 0.1);
        let targets = Tensor2::from_fn(n, 2, |_, c| if c == 0 { 0.3 } else { -0.4 });
        let sigma_col = Tensor2::from_fn(n, 2, |_, _| 0.05);
        let ds = Dataset {
            features,
            targets,
            true_sigma: sigma_col,
            noise: NoiseKind::NoiseFree,
            seed: 0,
        };
        let m = eval_metrics(&head, None, &ds, &LossKind::GaussianNll).unwrap();
        assert!(m.mae.abs() < 1e-15);
        assert_eq!(m.grid_kl, None);
    }

    #[test]
    fn grid_kl_against_matching_family_is_small() {
        // Gaussian noise scored against the Gaussian parametric density.
        let ds = crate::synth::gen_dataset(NoiseKind::GaussianHetero, 32, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = RegressionHead::init(
            &mut rng,
            2,
            2,
            &TrunkArch {
                layers: 1,
                width: 4,
            },
            1.0,
        )
        .unwrap();
        let m = eval_metrics(&head, None, &ds, &LossKind::GaussianNll).unwrap();
        let kl = m.grid_kl.unwrap();
        assert!(kl < 1e-6, "kl {kl}");
        // Against the Laplace family the divergence is clearly positive.
        let m2 = eval_metrics(&head, None, &ds, &LossKind::LaplaceNll).unwrap();
        assert!(m2.grid_kl.unwrap() > 0.05);
    }

    #[test]
    fn zero_init_flow_mass_and_export() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flow = FlowModel::zero_init(&mut rng, 2, &FlowArch::default()).unwrap();
        let mass = flow_normalization_mass(&flow, &normalization_grid()).unwrap();
        assert!((mass - 1.0).abs() < 0.01);

        let spec = GridSpec::new(-8.0, 8.0, 3).unwrap();
        let rows = export_density_grid(&ModelDensity::Flow(&flow), &spec).unwrap();
        assert_eq!(rows.len(), 9);
        // Zero-init DLE density is the standard normal: mode at the center.
        let spec2 = GridSpec::new(-8.0, 8.0, 41).unwrap();
        let rows2 = export_density_grid(&ModelDensity::Flow(&flow), &spec2).unwrap();
        let max = rows2
            .iter()
            .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
            .unwrap();
        assert!(max.0.abs() < 0.3 && max.1.abs() < 0.3);
        // And the exported grid re-integrates to one.
        let total: f64 = rows2.iter().map(|r| r.2.exp()).sum::<f64>() * spec2.cell_area();
        assert!((total - 1.0).abs() < 0.01);
    }
}
