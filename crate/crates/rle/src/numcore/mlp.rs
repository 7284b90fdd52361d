//! Small fully connected networks with hand-derived reverse-mode gradients.
//!
//! Hidden layers use leaky-ReLU; the output layer is linear. Parameters of a
//! net flatten into one vector with a stable ordering (layer-major, weights
//! row-major before biases) so optimizers and gradient checkers stay
//! model-agnostic.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::activation::{leaky_relu, leaky_relu_deriv};
use crate::numcore::tensor::Tensor2;

/// One affine layer, `y = W x + b` with `W` shaped `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Tensor2, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "layer bias length {} != output width {}",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor2::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn uniform<R: Rng>(rng: &mut R, out_dim: usize, in_dim: usize) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        let weight =
            Tensor2::from_fn(out_dim, in_dim, |_, _| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.data());
        out.extend_from_slice(&self.bias);
    }

    pub fn read_flat(&mut self, src: &[f64], cursor: &mut usize) -> Result<()> {
        let nw = self.weight.rows() * self.weight.cols();
        let need = nw + self.bias.len();
        if src.len() < *cursor + need {
            return Err(Error::Shape("flat parameter vector too short".into()));
        }
        self.weight
            .data_mut()
            .copy_from_slice(&src[*cursor..*cursor + nw]);
        self.bias
            .copy_from_slice(&src[*cursor + nw..*cursor + need]);
        *cursor += need;
        Ok(())
    }
}

/// How to initialise the output layer of a freshly built net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputInit {
    /// Same uniform `±sqrt(1/fan_in)` scheme as the hidden layers.
    Uniform,
    /// All-zero weights and biases, so the net starts as the zero function.
    Zero,
}

/// A feed-forward stack of [`LinearLayer`]s with leaky-ReLU between layers
/// and an identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<LinearLayer>,
    slope: f64,
}

/// Activation record from a forward pass, consumed by [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    /// Pre-activation of every layer, in order.
    pre: Vec<Vec<f64>>,
    /// Post-activation of every layer (last entry equals the output).
    post: Vec<Vec<f64>>,
}

pub struct MlpBackward {
    pub param_grads: Vec<f64>,
    pub input_grad: Vec<f64>,
}

impl MlpParams {
    pub fn new(layers: Vec<LinearLayer>, slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("MLP needs at least one layer".into()));
        }
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky-ReLU slope must lie in (0, 1), got {slope}"
            )));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output width {} != next input width {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers, slope })
    }

    /// Build a net over the width chain `dims` (e.g. `[1, 64, 64, 1]`),
    /// hidden layers uniform-initialised, output layer per `output`.
    pub fn init<R: Rng>(rng: &mut R, dims: &[usize], slope: f64, output: OutputInit) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("width chain needs at least two entries".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i == last && output == OutputInit::Zero {
                    LinearLayer::zeros(w[1], w[0])
                } else {
                    LinearLayer::uniform(rng, w[1], w[0])
                }
            })
            .collect();
        Self::new(layers, slope)
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP input length {} != expected {}",
                input.len(),
                self.in_dim()
            )));
        }
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let p = layer.apply(&x)?;
            x = if l + 1 < n {
                p.iter().map(|&v| leaky_relu(v, self.slope)).collect()
            } else {
                p.clone()
            };
            pre.push(p);
            post.push(x.clone());
        }
        let cache = MlpCache {
            input: input.to_vec(),
            pre,
            post,
        };
        Ok((x, cache))
    }

    /// Convenience evaluation without keeping the cache.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Exact reverse-mode gradients of `output . output_grad` with respect
    /// to every parameter (flat, matching [`MlpParams::to_flat`]) and the input.
    pub fn backward(&self, cache: &MlpCache, output_grad: &[f64]) -> Result<MlpBackward> {
        self.check_cache(cache)?;
        if output_grad.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output cotangent length {} != output width {}",
                output_grad.len(),
                self.out_dim()
            )));
        }
        let n = self.layers.len();
        // Per-layer gradient blocks, assembled back-to-front.
        let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut g = output_grad.to_vec();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            // Cotangent of this layer's pre-activation.
            if l + 1 < n {
                for (gi, &p) in g.iter_mut().zip(&cache.pre[l]) {
                    *gi *= leaky_relu_deriv(p, self.slope);
                }
            }
            let layer_in: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.post[l - 1]
            };
            let mut block = Vec::with_capacity(layer.param_count());
            for &gr in &g {
                for &a in layer_in {
                    block.push(gr * a);
                }
            }
            block.extend_from_slice(&g);
            blocks[l] = block;
            g = layer.weight.matvec_t(&g)?;
        }
        let mut param_grads = Vec::with_capacity(self.param_count());
        for b in blocks {
            param_grads.extend_from_slice(&b);
        }
        Ok(MlpBackward {
            param_grads,
            input_grad: g,
        })
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        if cache.pre.len() != self.layers.len()
            || cache.input.len() != self.in_dim()
            || cache
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(p, l)| p.len() != l.out_dim())
        {
            return Err(Error::StaleCache(
                "cache shape does not match this net".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.write_flat(out);
        }
    }

    pub fn read_flat(&mut self, src: &[f64], cursor: &mut usize) -> Result<()> {
        for l in &mut self.layers {
            l.read_flat(src, cursor)?;
        }
        Ok(())
    }

    pub fn set_from_flat(&mut self, src: &[f64]) -> Result<()> {
        let mut cursor = 0;
        self.read_flat(src, &mut cursor)?;
        if cursor != src.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} parameters, net expects {}",
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
    use crate::numcore::gradcheck::{finite_diff_grad, max_rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize) -> LinearLayer {
        LinearLayer::new(
            Tensor2::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { 0.0 }),
            vec![0.0; dim],
        )
        .unwrap()
    }

    #[test]
    fn single_identity_layer_passes_through() {
        let net = MlpParams::new(vec![identity_layer(2)], 0.01).unwrap();
        let (y, _) = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_output_layer_kills_any_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpParams::init(&mut rng, &[2, 8, 3], 0.01, OutputInit::Zero).unwrap();
        for trial in 0..5 {
            let x = [trial as f64, -1.5 * trial as f64];
            assert_eq!(net.eval(&x).unwrap(), vec![0.0; 3]);
        }
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        // Independent oracle: re-evaluate the net with plain loops.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpParams::init(&mut rng, &[3, 5, 2], 0.01, OutputInit::Uniform).unwrap();
        let x = [0.3, -1.2, 2.2];

        let mut h = vec![0.0; 5];
        for r in 0..5 {
            let mut acc = net.layers()[0].bias[r];
            for c in 0..3 {
                acc += net.layers()[0].weight.get(r, c) * x[c];
            }
            h[r] = if acc >= 0.0 { acc } else { 0.01 * acc };
        }
        let mut y = vec![0.0; 2];
        for r in 0..2 {
            let mut acc = net.layers()[1].bias[r];
            for (c, &hc) in h.iter().enumerate() {
                acc += net.layers()[1].weight.get(r, c) * hc;
            }
            y[r] = acc;
        }

        let (out, _) = net.forward(&x).unwrap();
        for (a, b) in out.iter().zip(&y) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpParams::init(&mut rng, &[2, 16, 2], 0.01, OutputInit::Uniform).unwrap();
        let a = net.eval(&[0.7, -0.2]).unwrap();
        let b = net.eval(&[0.7, -0.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpParams::init(&mut rng, &[2, 4, 2], 0.01, OutputInit::Uniform).unwrap();
        let (_, cache) = net.forward(&[0.5, -0.5]).unwrap();
        let back = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(back.param_grads.iter().all(|&g| g == 0.0));
        assert!(back.input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_net_weight_grad_is_outer_product() {
        let net = MlpParams::new(
            vec![LinearLayer::new(
                Tensor2::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
                vec![0.0, 0.0],
            )
            .unwrap()],
            0.01,
        )
        .unwrap();
        let x = [1.0, 2.0, 3.0];
        let (_, cache) = net.forward(&x).unwrap();
        let back = net.backward(&cache, &[2.0, -1.0]).unwrap();
        let expected_w = [2.0, 4.0, 6.0, -1.0, -2.0, -3.0];
        assert_eq!(&back.param_grads[..6], &expected_w);
        assert_eq!(&back.param_grads[6..], &[2.0, -1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let net = MlpParams::init(&mut rng, &[3, 6, 4, 2], 0.01, OutputInit::Uniform).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let cot: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();

            let (_, cache) = net.forward(&x).unwrap();
            let back = net.backward(&cache, &cot).unwrap();

            let flat = net.to_flat();
            let template = net.clone();
            let cot_fd = cot.clone();
            let x_fd = x.clone();
            let fd = finite_diff_grad(
                |p| {
                    let mut m = template.clone();
                    m.set_from_flat(p).unwrap();
                    let y = m.eval(&x_fd).unwrap();
                    y.iter().zip(&cot_fd).map(|(a, b)| a * b).sum()
                },
                &flat,
                1e-5,
            );
            assert!(max_rel_error(&back.param_grads, &fd, 1e-9) < 1e-6);

            let fd_in = finite_diff_grad(
                |xi| {
                    let y = net.eval(xi).unwrap();
                    y.iter().zip(&cot).map(|(a, b)| a * b).sum()
                },
                &x,
                1e-5,
            );
            assert!(max_rel_error(&back.input_grad, &fd_in, 1e-9) < 1e-6);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = MlpParams::init(&mut rng, &[2, 4, 1], 0.01, OutputInit::Uniform).unwrap();
        let b = MlpParams::init(&mut rng, &[2, 8, 1], 0.01, OutputInit::Uniform).unwrap();
        let (_, cache) = a.forward(&[0.1, 0.2]).unwrap();
        assert!(matches!(
            b.backward(&cache, &[1.0]),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MlpParams::init(&mut rng, &[2, 5, 3], 0.01, OutputInit::Uniform).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.param_count());
        let mut other = MlpParams::init(&mut rng, &[2, 5, 3], 0.01, OutputInit::Zero).unwrap();
        other.set_from_flat(&flat).unwrap();
        assert_eq!(other, net);
    }
}
