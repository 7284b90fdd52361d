//! On-demand numerical self-checks: finite-difference gradient
//! verification, flow round-trips, log-det against a numerical Jacobian,
//! density normalization, normalizer convergence, and the residual/direct
//! loss identity. The `check` subcommand runs these and reports one line
//! per check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::flow::{FlowArch, FlowModel};
use crate::grid::GridSpec;
use crate::lik::{
    compute_s, loss_dle, loss_rle, loss_value, standardize, BaseDensity, LossKind, RiemannCfg,
    StdNormal,
};
use crate::numcore::{finite_diff_grad, max_rel_error, MlpParams, OutputInit};
use crate::regress::{model_grad, model_loss, RegressionHead, TrunkArch};
use crate::trainer::flow_normalization_mass;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn(u64) -> Result<String>;

pub fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("mlp_gradients", check_mlp_gradients),
        ("head_gradients", check_head_gradients),
        ("loss_gradients", check_loss_gradients),
        ("flow_round_trip", check_flow_round_trip),
        ("log_det_jacobian", check_log_det_jacobian),
        ("flow_normalization", check_flow_normalization),
        ("normalizer_convergence", check_normalizer_convergence),
        ("rle_dle_identity", check_rle_dle_identity),
    ]
}

pub fn check_names() -> Vec<&'static str> {
    checks().iter().map(|(n, _)| *n).collect()
}

/// Run every check with draws derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    checks()
        .into_iter()
        .map(|(name, f)| match f(seed) {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}

fn fail(msg: String) -> crate::error::Error {
    crate::error::Error::Quadrature(msg)
}

fn small_flow(rng: &mut ChaCha20Rng) -> Result<FlowModel> {
    FlowModel::random_init(
        rng,
        2,
        &FlowArch {
            blocks: 3,
            layers: 3,
            width: 12,
        },
    )
}

fn check_mlp_gradients(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let net = MlpParams::init(&mut rng, &[3, 12, 8, 2], 0.01, OutputInit::Uniform)?;
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let cot: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = net.forward(&x)?;
        let back = net.backward(&cache, &cot)?;
        let flat = net.to_flat();
        let fd = finite_diff_grad(
            |p| {
                let mut m = net.clone();
                m.set_from_flat(p).unwrap();
                let y = m.eval(&x).unwrap();
                y.iter().zip(&cot).map(|(a, b)| a * b).sum()
            },
            &flat,
            1e-5,
        );
        worst = worst.max(max_rel_error(&back.param_grads, &fd, 1e-9));
    }
    if worst < 1e-6 {
        Ok(format!("max relative error {worst:.2e} over 20 nets"))
    } else {
        Err(fail(format!("mlp gradient error {worst:.2e} >= 1e-6")))
    }
}

fn check_head_gradients(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(2));
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let head = RegressionHead::init(
            &mut rng,
            2,
            2,
            &TrunkArch {
                layers: 2,
                width: 8,
            },
            1.0,
        )?;
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let d_mu = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let d_sig = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (_, cache) = head.forward_cached(&x)?;
        let back = head.backward(&cache, &d_mu, &d_sig)?;
        let flat = head.to_flat();
        let fd = finite_diff_grad(
            |p| {
                let mut h = head.clone();
                h.set_from_flat(p).unwrap();
                let pred = h.forward(&x).unwrap();
                pred.mu_hat.iter().zip(&d_mu).map(|(a, b)| a * b).sum::<f64>()
                    + pred
                        .sigma_hat
                        .iter()
                        .zip(&d_sig)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            },
            &flat,
            1e-5,
        );
        worst = worst.max(max_rel_error(&back.param_grads, &fd, 1e-9));
    }
    if worst < 1e-6 {
        Ok(format!("max relative error {worst:.2e} over 10 heads"))
    } else {
        Err(fail(format!("head gradient error {worst:.2e} >= 1e-6")))
    }
}

fn ladder(dim: usize) -> Vec<LossKind> {
    vec![
        LossKind::L2Const,
        LossKind::L1Const,
        LossKind::GaussianNll,
        LossKind::LaplaceNll,
        LossKind::Dle,
        LossKind::rle(BaseDensity::laplace(dim)),
        LossKind::rle(BaseDensity::gaussian(dim)),
    ]
}

fn check_loss_gradients(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(3));
    let mut worst = 0.0f64;
    for kind in ladder(2) {
        let head = RegressionHead::init(
            &mut rng,
            2,
            2,
            &TrunkArch {
                layers: 2,
                width: 8,
            },
            1.0,
        )?;
        let flow = small_flow(&mut rng)?;
        let flow_opt = kind.needs_flow().then_some(&flow);
        let features = crate::numcore::Tensor2::from_vec(
            1,
            2,
            vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        )?;
        // Targets offset from the (near-zero) initial head output so the
        // finite-difference stencil stays clear of absolute-value kinks.
        let targets = crate::numcore::Tensor2::from_vec(
            1,
            2,
            vec![rng.random_range(0.5..1.0), rng.random_range(-1.0..-0.5)],
        )?;
        let grads = model_grad(&head, flow_opt, &kind, &features, &targets)?;
        let mut joint = head.to_flat();
        if kind.needs_flow() {
            joint.extend(flow.to_flat());
        }
        let head_len = head.param_count();
        let fd = finite_diff_grad(
            |p| {
                let mut h = head.clone();
                h.set_from_flat(&p[..head_len]).unwrap();
                let f = if kind.needs_flow() {
                    let mut f = flow.clone();
                    f.set_from_flat(&p[head_len..]).unwrap();
                    Some(f)
                } else {
                    None
                };
                model_loss(&h, f.as_ref(), &kind, &features, &targets).unwrap()
            },
            &joint,
            1e-5,
        );
        let mut analytic = grads.d_head.clone();
        analytic.extend(grads.d_flow.clone());
        worst = worst.max(max_rel_error(&analytic, &fd, 1e-7));
    }
    if worst < 1e-4 {
        Ok(format!("max relative error {worst:.2e} across the loss ladder"))
    } else {
        Err(fail(format!("loss gradient error {worst:.2e} >= 1e-4")))
    }
}

fn check_flow_round_trip(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(4));
    let flow = small_flow(&mut rng)?;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let x = flow.forward(&z)?;
        let (back, _) = flow.inverse(&x)?;
        for (a, b) in z.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst < 1e-9 {
        Ok(format!("max round-trip error {worst:.2e} over 1000 points"))
    } else {
        Err(fail(format!("round-trip error {worst:.2e} >= 1e-9")))
    }
}

fn check_log_det_jacobian(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(5));
    let flow = small_flow(&mut rng)?;
    let block = &flow.blocks()[0];
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (_, log_det) = block.forward(&z)?;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let (xp, _) = block.forward(&zp)?;
            let (xm, _) = block.forward(&zm)?;
            for i in 0..2 {
                jac[i][j] = (xp[i] - xm[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        worst = worst.max((det.abs().ln() - log_det).abs());
    }
    if worst < 1e-5 {
        Ok(format!("max |log-det| discrepancy {worst:.2e} over 100 points"))
    } else {
        Err(fail(format!("log-det error {worst:.2e} >= 1e-5")))
    }
}

fn check_flow_normalization(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(6));
    let spec = GridSpec::new(-8.0, 8.0, 400)?;
    let zero = FlowModel::zero_init(&mut rng, 2, &FlowArch::default())?;
    let mass_zero = flow_normalization_mass(&zero, &spec)?;
    let random = small_flow(&mut rng)?;
    let mass_random = flow_normalization_mass(&random, &spec)?;
    for (label, mass) in [("zero-init", mass_zero), ("random", mass_random)] {
        if !(0.99..=1.01).contains(&mass) {
            return Err(fail(format!("{label} flow mass {mass:.6} outside [0.99, 1.01]")));
        }
    }
    Ok(format!(
        "grid mass zero-init {mass_zero:.6}, random {mass_random:.6}"
    ))
}

fn check_normalizer_convergence(_seed: u64) -> Result<String> {
    let q = BaseDensity::gaussian(1);
    let g = StdNormal { dim: 1 };
    let expected = 2.0 * std::f64::consts::PI.sqrt();
    let mut last = f64::INFINITY;
    let mut final_err = f64::INFINITY;
    for n in [100usize, 1000, 10_000] {
        let cfg = RiemannCfg::new(-5.0, 5.0, n)?;
        let err = (compute_s(&g, &q, &cfg)? - expected).abs();
        if err >= last {
            return Err(fail(format!(
                "normalizer error did not shrink: {err:.3e} at N={n} (prev {last:.3e})"
            )));
        }
        last = err;
        final_err = err;
    }
    if final_err < 1e-3 {
        Ok(format!("converges to 2*sqrt(pi); error {final_err:.2e} at N=10000"))
    } else {
        Err(fail(format!("normalizer error {final_err:.2e} >= 1e-3")))
    }
}

fn check_rle_dle_identity(seed: u64) -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(7));
    let flow = small_flow(&mut rng)?;
    let q = BaseDensity::laplace(2);
    let cfg = RiemannCfg::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mu_g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mu_hat = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let sig = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        let rle = loss_rle(&flow, &q, &mu_g, &mu_hat, &sig, false, &cfg)?;
        let dle = loss_dle(&flow, &mu_g, &mu_hat, &sig)?;
        let std = standardize(&mu_g, &mu_hat, &sig)?;
        let expected = -q.log_prob(&std)?;
        worst = worst.max((rle - dle - expected).abs());
    }
    if worst < 1e-12 {
        Ok(format!("max identity violation {worst:.2e} over 50 points"))
    } else {
        Err(fail(format!("identity violation {worst:.2e} >= 1e-12")))
    }
}

/// Sanity evaluation used by a couple of examples: the ladder value at a
/// shared input.
pub fn ladder_values_at(
    flow: &FlowModel,
    mu_g: &[f64],
    mu_hat: &[f64],
    sigma_hat: &[f64],
) -> Result<Vec<(String, f64)>> {
    ladder(mu_g.len())
        .into_iter()
        .map(|kind| {
            let v = loss_value(&kind, kind.needs_flow().then_some(flow), mu_g, mu_hat, sigma_hat)?;
            Ok((kind.label(), v))
        })
        .collect()
}
