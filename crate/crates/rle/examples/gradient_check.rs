//! Verify the hand-derived gradients of every loss kind against central
//! finite differences, over the complete joint head-plus-flow parameter
//! vector.
//!
//! Run with: `cargo run --release --example gradient_check`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rle::flow::{FlowArch, FlowModel};
use rle::lik::{BaseDensity, LossKind};
use rle::numcore::{finite_diff_grad, max_rel_error, Tensor2};
use rle::regress::{model_grad, model_loss, RegressionHead, TrunkArch};

fn main() -> rle::Result<()> {
    let kinds = [
        LossKind::L2Const,
        LossKind::L1Const,
        LossKind::GaussianNll,
        LossKind::LaplaceNll,
        LossKind::Dle,
        LossKind::rle(BaseDensity::laplace(2)),
        LossKind::rle(BaseDensity::gaussian(2)),
    ];
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let head = RegressionHead::init(&mut rng, 2, 2, &TrunkArch { layers: 2, width: 16 }, 1.0)?;
    let flow = FlowModel::random_init(&mut rng, 2, &FlowArch { blocks: 3, layers: 3, width: 16 })?;

    let features = Tensor2::from_vec(2, 2, vec![0.3, -0.5, 1.1, 0.2])?;
    let targets = Tensor2::from_vec(2, 2, vec![0.9, 0.8, -0.7, -0.9])?;

    println!("{:>14}  {:>10}  {:>8}", "loss", "max rel err", "params");
    for kind in &kinds {
        let flow_opt = kind.needs_flow().then_some(&flow);
        let grads = model_grad(&head, flow_opt, kind, &features, &targets)?;

        let mut joint = head.to_flat();
        if kind.needs_flow() {
            joint.extend(flow.to_flat());
        }
        let head_len = head.param_count();
        let fd = finite_diff_grad(
            |p| {
                let mut h = head.clone();
                h.set_from_flat(&p[..head_len]).unwrap();
                let f = kind.needs_flow().then(|| {
                    let mut f = flow.clone();
                    f.set_from_flat(&p[head_len..]).unwrap();
                    f
                });
                model_loss(&h, f.as_ref(), kind, &features, &targets).unwrap()
            },
            &joint,
            1e-5,
        );
        let mut analytic = grads.d_head.clone();
        analytic.extend(grads.d_flow.clone());
        let err = max_rel_error(&analytic, &fd, 1e-7);
        println!("{:>14}  {:>10.3e}  {:>8}", kind.label(), err, joint.len());
    }

    // The finite-difference oracle itself, on a known function.
    let fd = finite_diff_grad(|w| w[0] * w[0], &[3.0], 1e-5);
    println!("\noracle sanity: d/dw w^2 at w=3 -> {:.9} (exact 6)", fd[0]);

    let mut rng2 = ChaCha20Rng::seed_from_u64(11);
    let probe: Vec<f64> = (0..4).map(|_| rng2.random_range(-1.0..1.0)).collect();
    let fd0 = finite_diff_grad(|_| 4.2, &probe, 1e-5);
    println!("oracle sanity: constant function  -> {fd0:?}");
    Ok(())
}
