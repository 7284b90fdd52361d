//! Affine coupling block: identity on the head of the vector, element-wise
//! affine transform on the tail with scale/shift nets fed by the head.
//! The Jacobian is triangular, so the log-determinant is the plain sum of
//! the per-tail log-scales.
//!
//! The log-scale is the scale net's output squashed through tanh, so each
//! block's stretch stays inside `(1/e, e)`. Unbounded log-scales make joint
//! maximum-likelihood training run away: the cusp of a Laplace-like target
//! rewards ever-sharper contractions until `exp` overflows.

use crate::error::{Error, Result};
use crate::numcore::{MlpCache, MlpParams};

/// Overflow guard on the log-scale outputs; anything beyond this aborts the
/// run instead of silently producing `exp` overflow. With the tanh bound it
/// is a backstop against snapshots holding pathological weights.
pub const LOG_SCALE_GUARD: f64 = 50.0;

/// One coupling layer over `dim >= 2` inputs split at `ceil(dim / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    dim: usize,
    split: usize,
    /// Maps the head (length `split`) to raw log-scales; the block applies
    /// tanh on top.
    scale_net: MlpParams,
    /// Maps the head to per-tail shifts.
    shift_net: MlpParams,
}

/// Activation record of one inverse pass, consumed by
/// [`CouplingBlock::inverse_backward`].
#[derive(Debug)]
pub struct CouplingInvCache {
    g_vals: Vec<f64>,
    exp_neg_g: Vec<f64>,
    z_tail: Vec<f64>,
    g_cache: MlpCache,
    h_cache: MlpCache,
}

/// Gradients flowing out of one inverse pass.
pub struct CouplingInvBackward {
    /// Cotangent of the block input `x`.
    pub input_grad: Vec<f64>,
    /// Flat gradient of the scale net, then the shift net.
    pub scale_grads: Vec<f64>,
    pub shift_grads: Vec<f64>,
}

impl CouplingBlock {
    pub fn new(dim: usize, scale_net: MlpParams, shift_net: MlpParams) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Shape(format!(
                "coupling block needs dim >= 2, got {dim}"
            )));
        }
        let split = dim.div_ceil(2);
        let tail = dim - split;
        for (name, net) in [("scale", &scale_net), ("shift", &shift_net)] {
            if net.in_dim() != split || net.out_dim() != tail {
                return Err(Error::Shape(format!(
                    "{} net maps {} -> {}, block needs {} -> {}",
                    name,
                    net.in_dim(),
                    net.out_dim(),
                    split,
                    tail
                )));
            }
        }
        Ok(Self {
            dim,
            split,
            scale_net,
            shift_net,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn scale_net(&self) -> &MlpParams {
        &self.scale_net
    }

    pub fn shift_net(&self) -> &MlpParams {
        &self.shift_net
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "coupling input length {} != dim {}",
                v.len(),
                self.dim
            )));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coupling input component {} is {}",
                i, v[i]
            )));
        }
        Ok(())
    }

    fn guard_scales(g: &[f64]) -> Result<()> {
        let max_abs = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs > LOG_SCALE_GUARD {
            return Err(Error::DivergentScale {
                max_abs,
                guard: LOG_SCALE_GUARD,
            });
        }
        Ok(())
    }

    /// The per-tail log-scales at a given head: `tanh(scale_net(head))`.
    fn log_scales(&self, head: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.scale_net.eval(head)?;
        for v in g.iter_mut() {
            *v = v.tanh();
        }
        Self::guard_scales(&g)?;
        Ok(g)
    }

    /// `x_head = z_head`, `x_tail = z_tail * exp(g(z_head)) + h(z_head)`;
    /// returns the transformed vector and `log_det = sum(g(z_head))`.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(z)?;
        let head = &z[..self.split];
        let g = self.log_scales(head)?;
        let h = self.shift_net.eval(head)?;
        let mut x = z.to_vec();
        let mut log_det = 0.0;
        for (j, xv) in x[self.split..].iter_mut().enumerate() {
            *xv = *xv * g[j].exp() + h[j];
            log_det += g[j];
        }
        Ok((x, log_det))
    }

    /// Exact inverse: `z_tail = (x_tail - h(x_head)) * exp(-g(x_head))`;
    /// returns `log_det_inv = -sum(g(x_head))`.
    pub fn inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, log_det_inv, _) = self.inverse_cached(x)?;
        Ok((z, log_det_inv))
    }

    /// Inverse pass that retains the activations needed for the backward pass.
    pub fn inverse_cached(&self, x: &[f64]) -> Result<(Vec<f64>, f64, CouplingInvCache)> {
        self.check_input(x)?;
        let head = &x[..self.split];
        let (raw, g_cache) = self.scale_net.forward(head)?;
        let g: Vec<f64> = raw.iter().map(|v| v.tanh()).collect();
        Self::guard_scales(&g)?;
        let (h, h_cache) = self.shift_net.forward(head)?;
        let mut z = x.to_vec();
        let mut log_det_inv = 0.0;
        let mut exp_neg_g = Vec::with_capacity(g.len());
        for (j, zv) in z[self.split..].iter_mut().enumerate() {
            let e = (-g[j]).exp();
            *zv = (*zv - h[j]) * e;
            exp_neg_g.push(e);
            log_det_inv -= g[j];
        }
        let z_tail = z[self.split..].to_vec();
        Ok((
            z,
            log_det_inv,
            CouplingInvCache {
                g_vals: g,
                exp_neg_g,
                z_tail,
                g_cache,
                h_cache,
            },
        ))
    }

    /// Reverse-mode step through one inverse pass.
    ///
    /// `output_grad` is the cotangent of the produced `z`; `log_det_grad` is
    /// the cotangent of the returned `log_det_inv` (1.0 inside a log-prob).
    pub fn inverse_backward(
        &self,
        cache: &CouplingInvCache,
        output_grad: &[f64],
        log_det_grad: f64,
    ) -> Result<CouplingInvBackward> {
        let tail = self.dim - self.split;
        if output_grad.len() != self.dim
            || cache.g_vals.len() != tail
            || cache.z_tail.len() != tail
        {
            return Err(Error::StaleCache(
                "coupling cache does not match this block".into(),
            ));
        }
        // z_tail_j = (x_tail_j - h_j) * exp(-g_j);  log_det_inv = -sum g_j;
        // g_j = tanh(raw_j), so d g / d raw = 1 - g^2.
        let mut d_x_tail = vec![0.0; tail];
        let mut d_raw = vec![0.0; tail];
        let mut d_h = vec![0.0; tail];
        for j in 0..tail {
            let dz = output_grad[self.split + j];
            d_x_tail[j] = dz * cache.exp_neg_g[j];
            let d_g = -dz * cache.z_tail[j] - log_det_grad;
            d_raw[j] = d_g * (1.0 - cache.g_vals[j] * cache.g_vals[j]);
            d_h[j] = -dz * cache.exp_neg_g[j];
        }
        let g_back = self.scale_net.backward(&cache.g_cache, &d_raw)?;
        let h_back = self.shift_net.backward(&cache.h_cache, &d_h)?;

        let mut input_grad = vec![0.0; self.dim];
        for i in 0..self.split {
            input_grad[i] = output_grad[i] + g_back.input_grad[i] + h_back.input_grad[i];
        }
        input_grad[self.split..].copy_from_slice(&d_x_tail);

        Ok(CouplingInvBackward {
            input_grad,
            scale_grads: g_back.param_grads,
            shift_grads: h_back.param_grads,
        })
    }

    pub fn param_count(&self) -> usize {
        self.scale_net.param_count() + self.shift_net.param_count()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.scale_net.write_flat(out);
        self.shift_net.write_flat(out);
    }

    pub fn read_flat(&mut self, src: &[f64], cursor: &mut usize) -> Result<()> {
        self.scale_net.read_flat(src, cursor)?;
        self.shift_net.read_flat(src, cursor)
    }
}
