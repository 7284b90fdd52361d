//! RealNVP normalizing flow: affine coupling blocks with exact inverses and
//! analytic log-determinants, composed with fixed dimension-reversal
//! permutations over a standard-normal base density.

pub mod coupling;

pub use coupling::{CouplingBlock, CouplingInvCache, LOG_SCALE_GUARD};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::{MlpParams, OutputInit};

/// Architecture of the flow: block count `K`, and per-coupling-net layer
/// count and width. Defaults follow the 6-block, 3x64 configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowArch {
    pub blocks: usize,
    pub layers: usize,
    pub width: usize,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            blocks: 6,
            layers: 3,
            width: 64,
        }
    }
}

impl FlowArch {
    /// Width chain for one coupling net mapping `in_dim -> out_dim`.
    fn net_dims(&self, in_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers + 1);
        dims.push(in_dim);
        for _ in 0..self.layers.saturating_sub(1) {
            dims.push(self.width);
        }
        dims.push(out_dim);
        dims
    }
}

/// Stack of coupling blocks with a dimension reversal applied before each
/// block, over a standard-normal base. Immutable during evaluation; training
/// mutates it only through [`FlowModel::set_from_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    blocks: Vec<CouplingBlock>,
}

/// Value and gradients of one log-density evaluation.
pub struct FlowLogProbGrad {
    pub log_prob: f64,
    /// Gradient with respect to the evaluation point.
    pub grad_x: Vec<f64>,
    /// Gradient with respect to all flow parameters, in flat order.
    pub grad_params: Vec<f64>,
}

fn reversed(v: &[f64]) -> Vec<f64> {
    v.iter().rev().copied().collect()
}

fn std_normal_log_density(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * sq
}

impl FlowModel {
    pub fn new(dim: usize, blocks: Vec<CouplingBlock>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Shape(format!("flow needs dim >= 2, got {dim}")));
        }
        if blocks.is_empty() {
            return Err(Error::Shape("flow needs at least one block".into()));
        }
        if let Some(b) = blocks.iter().find(|b| b.dim() != dim) {
            return Err(Error::Shape(format!(
                "block dim {} != flow dim {}",
                b.dim(),
                dim
            )));
        }
        Ok(Self { dim, blocks })
    }

    fn init<R: Rng>(rng: &mut R, dim: usize, arch: &FlowArch, output: OutputInit) -> Result<Self> {
        if arch.blocks == 0 {
            return Err(Error::Config("flow needs at least one block".into()));
        }
        let split = dim.div_ceil(2);
        let tail = dim - split;
        let dims = arch.net_dims(split, tail);
        let blocks = (0..arch.blocks)
            .map(|_| {
                let g = MlpParams::init(rng, &dims, crate::numcore::DEFAULT_LEAKY_SLOPE, output)?;
                let h = MlpParams::init(rng, &dims, crate::numcore::DEFAULT_LEAKY_SLOPE, output)?;
                CouplingBlock::new(dim, g, h)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, blocks)
    }

    /// Hidden layers random, output layers of every g and h net zeroed, so
    /// the flow starts as the identity map and the density starts at the
    /// standard-normal base.
    pub fn zero_init<R: Rng>(rng: &mut R, dim: usize, arch: &FlowArch) -> Result<Self> {
        Self::init(rng, dim, arch, OutputInit::Zero)
    }

    /// Every layer random; used by round-trip and gradient tests that need a
    /// non-trivial transform.
    pub fn random_init<R: Rng>(rng: &mut R, dim: usize, arch: &FlowArch) -> Result<Self> {
        Self::init(rng, dim, arch, OutputInit::Uniform)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    /// Applies (reverse-permute, coupling-forward) for each block in order.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Shape(format!(
                "flow input length {} != dim {}",
                z.len(),
                self.dim
            )));
        }
        let mut v = z.to_vec();
        for block in &self.blocks {
            let y = reversed(&v);
            let (x, _) = block.forward(&y)?;
            v = x;
        }
        Ok(v)
    }

    /// Exact inverse of [`FlowModel::forward`]; also returns the summed
    /// log-determinant of the inverse map.
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "flow input length {} != dim {}",
                x.len(),
                self.dim
            )));
        }
        let mut v = x.to_vec();
        let mut log_det_inv = 0.0;
        for block in self.blocks.iter().rev() {
            let (y, ldi) = block.inverse(&v)?;
            log_det_inv += ldi;
            v = reversed(&y);
        }
        Ok((v, log_det_inv))
    }

    /// `log N(f^{-1}(x); 0, I) + sum_k log|det d f_k^{-1}|`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (z0, log_det_inv) = self.inverse(x)?;
        Ok(std_normal_log_density(&z0) + log_det_inv)
    }

    /// Log-density plus exact reverse-mode gradients with respect to the
    /// evaluation point and every flow parameter.
    pub fn log_prob_with_grad(&self, x: &[f64]) -> Result<FlowLogProbGrad> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "flow input length {} != dim {}",
                x.len(),
                self.dim
            )));
        }
        let k = self.blocks.len();
        // Inverse pass, last block first, keeping each block's cache.
        let mut caches: Vec<CouplingInvCache> = Vec::with_capacity(k);
        let mut v = x.to_vec();
        let mut log_det_inv = 0.0;
        for block in self.blocks.iter().rev() {
            let (y, ldi, cache) = block.inverse_cached(&v)?;
            caches.push(cache);
            log_det_inv += ldi;
            v = reversed(&y);
        }
        let log_prob = std_normal_log_density(&v) + log_det_inv;

        // Backward pass in block order 0..K, the reverse of the computation.
        let mut grad_params = vec![0.0; self.param_count()];
        let offsets = self.block_offsets();
        let mut dv: Vec<f64> = v.iter().map(|&z| -z).collect();
        for (idx, block) in self.blocks.iter().enumerate() {
            let cache = &caches[k - 1 - idx];
            let du = reversed(&dv);
            let back = block.inverse_backward(cache, &du, 1.0)?;
            let at = offsets[idx];
            let ng = back.scale_grads.len();
            grad_params[at..at + ng].copy_from_slice(&back.scale_grads);
            grad_params[at + ng..at + ng + back.shift_grads.len()]
                .copy_from_slice(&back.shift_grads);
            dv = back.input_grad;
        }

        Ok(FlowLogProbGrad {
            log_prob,
            grad_x: dv,
            grad_params,
        })
    }

    /// Log-density at `x` plus `weight * gradient` accumulated into `acc`
    /// (flat parameter layout), where the weight may depend on the density
    /// itself. Quadrature loops use this to avoid materializing one full
    /// gradient vector per grid point: the backward seed is pre-scaled, so
    /// block gradients add straight into the accumulator.
    pub fn log_prob_grad_weighted<F>(
        &self,
        x: &[f64],
        weight_of_log_prob: F,
        acc: &mut [f64],
    ) -> Result<(f64, f64)>
    where
        F: FnOnce(f64) -> f64,
    {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "flow input length {} != dim {}",
                x.len(),
                self.dim
            )));
        }
        if acc.len() != self.param_count() {
            return Err(Error::Shape("gradient accumulator length mismatch".into()));
        }
        let k = self.blocks.len();
        let mut caches: Vec<CouplingInvCache> = Vec::with_capacity(k);
        let mut v = x.to_vec();
        let mut log_det_inv = 0.0;
        for block in self.blocks.iter().rev() {
            let (y, ldi, cache) = block.inverse_cached(&v)?;
            caches.push(cache);
            log_det_inv += ldi;
            v = reversed(&y);
        }
        let log_prob = std_normal_log_density(&v) + log_det_inv;
        let weight = weight_of_log_prob(log_prob);
        if weight == 0.0 {
            return Ok((log_prob, weight));
        }

        let offsets = self.block_offsets();
        let mut dv: Vec<f64> = v.iter().map(|&z| -z * weight).collect();
        for (idx, block) in self.blocks.iter().enumerate() {
            let cache = &caches[k - 1 - idx];
            let du = reversed(&dv);
            let back = block.inverse_backward(cache, &du, weight)?;
            let at = offsets[idx];
            for (a, g) in acc[at..].iter_mut().zip(&back.scale_grads) {
                *a += g;
            }
            let at = at + back.scale_grads.len();
            for (a, g) in acc[at..].iter_mut().zip(&back.shift_grads) {
                *a += g;
            }
            dv = back.input_grad;
        }
        Ok((log_prob, weight))
    }

    /// Draws `z ~ N(0, I)` from the rng and pushes it through the flow.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.forward(&z)
    }

    fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for b in &self.blocks {
            offsets.push(at);
            at += b.param_count();
        }
        offsets
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            b.write_flat(&mut out);
        }
        out
    }

    pub fn set_from_flat(&mut self, src: &[f64]) -> Result<()> {
        let mut cursor = 0;
        for b in &mut self.blocks {
            b.read_flat(src, &mut cursor)?;
        }
        if cursor != src.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} parameters, flow expects {}",
                src.len(),
                cursor
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, max_rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN_2PI: f64 = 1.8378770664093453;

    fn small_arch() -> FlowArch {
        FlowArch {
            blocks: 4,
            layers: 3,
            width: 8,
        }
    }

    #[test]
    fn zero_init_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flow = FlowModel::zero_init(&mut rng, 2, &FlowArch::default()).unwrap();
        // Even number of reversals composes to the identity permutation.
        let z = [0.3, -1.7];
        let x = flow.forward(&z).unwrap();
        assert_eq!(x, z.to_vec());
    }

    #[test]
    fn zero_init_density_is_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for blocks in [5usize, 6] {
            let arch = FlowArch {
                blocks,
                ..FlowArch::default()
            };
            let flow = FlowModel::zero_init(&mut rng, 2, &arch).unwrap();
            assert!((flow.log_prob(&[0.0, 0.0]).unwrap() + LN_2PI).abs() < 1e-12);
            assert!((flow.log_prob(&[1.0, 0.0]).unwrap() + LN_2PI + 0.5).abs() < 1e-12);
            for _ in 0..20 {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let expected = -LN_2PI - 0.5 * (x[0] * x[0] + x[1] * x[1]);
                assert!((flow.log_prob(&x).unwrap() - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_block_matches_hand_computation() {
        use crate::numcore::{LinearLayer, Tensor2};
        let constant = |v: f64| {
            MlpParams::new(
                vec![LinearLayer::new(Tensor2::zeros(1, 1), vec![v]).unwrap()],
                0.01,
            )
            .unwrap()
        };
        let block =
            CouplingBlock::new(2, constant(2.0f64.ln().atanh()), constant(0.5)).unwrap();
        let flow = FlowModel::new(2, vec![block]).unwrap();
        // Forward reverses (a, b) to (b, a) then maps tail: x = (b, 2a + 0.5).
        let x = flow.forward(&[1.0, 3.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-15);
        assert!((x[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_exact_to_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flow = FlowModel::random_init(&mut rng, 2, &small_arch()).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let z = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let x = flow.forward(&z).unwrap();
            let (z_back, _) = flow.inverse(&x).unwrap();
            for (a, b) in z.iter().zip(&z_back) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-9, "round-trip error {worst}");
    }

    #[test]
    fn log_prob_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flow = FlowModel::random_init(&mut rng, 2, &small_arch()).unwrap();
        let x = [0.7, -0.4];
        let grad = flow.log_prob_with_grad(&x).unwrap();
        assert!((grad.log_prob - flow.log_prob(&x).unwrap()).abs() < 1e-14);

        let fd_x = finite_diff_grad(|xi| flow.log_prob(xi).unwrap(), &x, 1e-6);
        assert!(max_rel_error(&grad.grad_x, &fd_x, 1e-9) < 1e-6);

        let flat = flow.to_flat();
        let fd_p = finite_diff_grad(
            |p| {
                let mut f = flow.clone();
                f.set_from_flat(p).unwrap();
                f.log_prob(&x).unwrap()
            },
            &flat,
            1e-6,
        );
        assert!(max_rel_error(&grad.grad_params, &fd_p, 1e-9) < 1e-6);
    }

    #[test]
    fn zero_init_grad_is_negative_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let flow = FlowModel::zero_init(&mut rng, 2, &FlowArch::default()).unwrap();
        let g = flow.log_prob_with_grad(&[1.0, 0.0]).unwrap();
        assert!((g.grad_x[0] + 1.0).abs() < 1e-12);
        assert!(g.grad_x[1].abs() < 1e-12);
        // At the mode the gradient vanishes.
        let g0 = flow.log_prob_with_grad(&[0.0, 0.0]).unwrap();
        assert!(g0.grad_x.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn forward_and_matched_inverse_log_dets_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let flow = FlowModel::random_init(&mut rng, 3, &small_arch()).unwrap();
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = flow.forward(&z).unwrap();
            let (_, ldi) = flow.inverse(&x).unwrap();
            // Recompute the forward log-det through the blocks.
            let mut v = z.clone();
            let mut ld = 0.0;
            for block in flow.blocks() {
                let y: Vec<f64> = v.iter().rev().copied().collect();
                let (xn, d) = block.forward(&y).unwrap();
                ld += d;
                v = xn;
            }
            assert!((ld + ldi).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_seeded_and_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let flow = FlowModel::random_init(&mut rng, 2, &small_arch()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let a = flow.sample(&mut r1).unwrap();
            let b = flow.sample(&mut r2).unwrap();
            assert_eq!(a, b);
            assert!(flow.log_prob(&a).unwrap().is_finite());
        }
    }

    #[test]
    fn zero_init_sample_mean_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let flow = FlowModel::zero_init(&mut rng, 2, &small_arch()).unwrap();
        let mut sum = [0.0f64; 2];
        let n = 100_000;
        let mut draws = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..n {
            let s = flow.sample(&mut draws).unwrap();
            sum[0] += s[0];
            sum[1] += s[1];
        }
        assert!((sum[0] / n as f64).abs() < 0.02);
        assert!((sum[1] / n as f64).abs() < 0.02);
    }
}
