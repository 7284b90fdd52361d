//! The regression model: a trunk MLP with two heads, a linear one for the
//! location and a sigmoid-bounded one for the scale, wired to any loss kind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::lik::{loss_grad, loss_value, LossKind};
use crate::numcore::{
    leaky_relu, leaky_relu_deriv, sigmoid, LinearLayer, MlpCache, MlpParams, Tensor2,
};
use rand::Rng;

/// Trunk shape: number of hidden layers and their width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkArch {
    pub layers: usize,
    pub width: usize,
}

impl Default for TrunkArch {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 64,
        }
    }
}

/// Location and scale for one input; the scale is inside `(0, sigma_max)`
/// by the sigmoid construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
}

/// Feature trunk plus location/scale heads.
///
/// The trunk output passes through the hidden activation before the heads,
/// so every trunk layer is a nonlinear hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    trunk: MlpParams,
    mu_head: LinearLayer,
    sigma_head: LinearLayer,
    sigma_max: f64,
}

/// Activation record for [`RegressionHead::backward`].
#[derive(Debug)]
pub struct HeadCache {
    trunk_cache: MlpCache,
    trunk_out: Vec<f64>,
    features_hidden: Vec<f64>,
    sigma_hat: Vec<f64>,
}

pub struct HeadBackward {
    /// Flat gradient in the head's parameter order: trunk, mu head, sigma head.
    pub param_grads: Vec<f64>,
    pub input_grad: Vec<f64>,
}

impl RegressionHead {
    pub fn new(
        trunk: MlpParams,
        mu_head: LinearLayer,
        sigma_head: LinearLayer,
        sigma_max: f64,
    ) -> Result<Self> {
        if sigma_max <= 0.0 {
            return Err(Error::Config(format!(
                "sigma_max must be > 0, got {sigma_max}"
            )));
        }
        let hidden = trunk.out_dim();
        if mu_head.in_dim() != hidden || sigma_head.in_dim() != hidden {
            return Err(Error::Shape(format!(
                "heads expect trunk width {}, got mu {} / sigma {}",
                hidden,
                mu_head.in_dim(),
                sigma_head.in_dim()
            )));
        }
        if mu_head.out_dim() != sigma_head.out_dim() {
            return Err(Error::Shape(format!(
                "mu and sigma heads must share output dim, got {} / {}",
                mu_head.out_dim(),
                sigma_head.out_dim()
            )));
        }
        Ok(Self {
            trunk,
            mu_head,
            sigma_head,
            sigma_max,
        })
    }

    /// Seeded construction: trunk and both heads uniform-initialised, biases
    /// zero. Draw order is trunk layers, then mu head, then sigma head.
    pub fn init<R: Rng>(
        rng: &mut R,
        feature_dim: usize,
        out_dim: usize,
        arch: &TrunkArch,
        sigma_max: f64,
    ) -> Result<Self> {
        if arch.layers == 0 || arch.width == 0 {
            return Err(Error::Config("trunk needs at least one nonzero layer".into()));
        }
        let mut dims = vec![feature_dim];
        dims.extend(std::iter::repeat(arch.width).take(arch.layers));
        let trunk = MlpParams::init(
            rng,
            &dims,
            crate::numcore::DEFAULT_LEAKY_SLOPE,
            crate::numcore::OutputInit::Uniform,
        )?;
        let mu_head = LinearLayer::uniform(rng, out_dim, arch.width);
        let sigma_head = LinearLayer::uniform(rng, out_dim, arch.width);
        Self::new(trunk, mu_head, sigma_head, sigma_max)
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mu_head.out_dim()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn trunk(&self) -> &MlpParams {
        &self.trunk
    }

    pub fn mu_head(&self) -> &LinearLayer {
        &self.mu_head
    }

    pub fn sigma_head(&self) -> &LinearLayer {
        &self.sigma_head
    }

    pub fn forward(&self, features: &[f64]) -> Result<Prediction> {
        Ok(self.forward_cached(features)?.0)
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<(Prediction, HeadCache)> {
        let (trunk_out, trunk_cache) = self.trunk.forward(features)?;
        let slope = self.trunk.slope();
        let hidden: Vec<f64> = trunk_out.iter().map(|&v| leaky_relu(v, slope)).collect();
        let mu_hat = self.mu_head.apply(&hidden)?;
        let logits = self.sigma_head.apply(&hidden)?;
        let sigma_hat: Vec<f64> = logits
            .iter()
            .map(|&a| self.sigma_max * sigmoid(a))
            .collect();
        debug_assert!(
            sigma_hat.iter().all(|&s| s > 0.0 && s < self.sigma_max),
            "sigma outside (0, sigma_max)"
        );
        Ok((
            Prediction {
                mu_hat,
                sigma_hat: sigma_hat.clone(),
            },
            HeadCache {
                trunk_cache,
                trunk_out,
                features_hidden: hidden,
                sigma_hat,
            },
        ))
    }

    /// Reverse-mode pass from cotangents of `mu_hat` and `sigma_hat` down
    /// to all head parameters and the input features.
    pub fn backward(
        &self,
        cache: &HeadCache,
        d_mu_hat: &[f64],
        d_sigma_hat: &[f64],
    ) -> Result<HeadBackward> {
        let d = self.out_dim();
        if d_mu_hat.len() != d || d_sigma_hat.len() != d {
            return Err(Error::Shape(format!(
                "head cotangent lengths {} / {} != output dim {}",
                d_mu_hat.len(),
                d_sigma_hat.len(),
                d
            )));
        }
        if cache.features_hidden.len() != self.mu_head.in_dim() {
            return Err(Error::StaleCache("head cache width mismatch".into()));
        }
        // sigma = sigma_max * sigmoid(a)  =>  d sigma / d a = sigma (1 - sigma / sigma_max)
        let d_logits: Vec<f64> = d_sigma_hat
            .iter()
            .zip(&cache.sigma_hat)
            .map(|(&ds, &s)| ds * s * (1.0 - s / self.sigma_max))
            .collect();

        let hidden = &cache.features_hidden;
        let mut mu_block = Vec::with_capacity(self.mu_head.param_count());
        for &g in d_mu_hat {
            for &a in hidden {
                mu_block.push(g * a);
            }
        }
        mu_block.extend_from_slice(d_mu_hat);

        let mut sigma_block = Vec::with_capacity(self.sigma_head.param_count());
        for &g in &d_logits {
            for &a in hidden {
                sigma_block.push(g * a);
            }
        }
        sigma_block.extend_from_slice(&d_logits);

        let mut d_hidden = self.mu_head.weight.matvec_t(d_mu_hat)?;
        let d_hidden_sigma = self.sigma_head.weight.matvec_t(&d_logits)?;
        for (a, b) in d_hidden.iter_mut().zip(&d_hidden_sigma) {
            *a += b;
        }
        let slope = self.trunk.slope();
        let d_trunk_out: Vec<f64> = d_hidden
            .iter()
            .zip(&cache.trunk_out)
            .map(|(&g, &t)| g * leaky_relu_deriv(t, slope))
            .collect();
        let trunk_back = self.trunk.backward(&cache.trunk_cache, &d_trunk_out)?;

        let mut param_grads = trunk_back.param_grads;
        param_grads.extend_from_slice(&mu_block);
        param_grads.extend_from_slice(&sigma_block);
        Ok(HeadBackward {
            param_grads,
            input_grad: trunk_back.input_grad,
        })
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.mu_head.param_count() + self.sigma_head.param_count()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.trunk.write_flat(&mut out);
        self.mu_head.write_flat(&mut out);
        self.sigma_head.write_flat(&mut out);
        out
    }

    pub fn set_from_flat(&mut self, src: &[f64]) -> Result<()> {
        let mut cursor = 0;
        self.trunk.read_flat(src, &mut cursor)?;
        self.mu_head.read_flat(src, &mut cursor)?;
        self.sigma_head.read_flat(src, &mut cursor)?;
        if cursor != src.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} parameters, head expects {}",
                src.len(),
                cursor
            )));
        }
        Ok(())
    }
}

fn check_batch(head: &RegressionHead, features: &Tensor2, mu_g: &Tensor2) -> Result<()> {
    if features.rows() == 0 {
        return Err(Error::Empty("model loss over an empty batch".into()));
    }
    if features.rows() != mu_g.rows() {
        return Err(Error::Shape(format!(
            "feature rows {} != target rows {}",
            features.rows(),
            mu_g.rows()
        )));
    }
    if features.cols() != head.feature_dim() || mu_g.cols() != head.out_dim() {
        return Err(Error::Shape(format!(
            "batch is {}x{} -> {}x{}, head expects {} -> {}",
            features.rows(),
            features.cols(),
            mu_g.rows(),
            mu_g.cols(),
            head.feature_dim(),
            head.out_dim()
        )));
    }
    Ok(())
}

/// The log-s term is identical for every sample of a batch (it reads the
/// flow alone), so batch evaluation computes it once and runs the
/// per-sample loop on the s-free kind.
fn split_log_s(kind: &LossKind) -> (LossKind, Option<(crate::lik::BaseDensity, crate::lik::RiemannCfg)>) {
    match kind {
        LossKind::Rle {
            q,
            include_log_s: true,
            riemann,
        } => (LossKind::rle(*q), Some((*q, *riemann))),
        other => (other.clone(), None),
    }
}

/// Mean loss of the selected kind over a batch.
pub fn model_loss(
    head: &RegressionHead,
    flow: Option<&FlowModel>,
    kind: &LossKind,
    features: &Tensor2,
    mu_g: &Tensor2,
) -> Result<f64> {
    check_batch(head, features, mu_g)?;
    let (per_sample_kind, log_s_cfg) = split_log_s(kind);
    let mut total = 0.0;
    for r in 0..features.rows() {
        let pred = head.forward(features.row(r))?;
        total += loss_value(
            &per_sample_kind,
            flow,
            mu_g.row(r),
            &pred.mu_hat,
            &pred.sigma_hat,
        )?;
    }
    let mut loss = total / features.rows() as f64;
    if let Some((q, riemann)) = log_s_cfg {
        let flow = flow.ok_or_else(|| Error::Config("rle requires a flow".into()))?;
        loss -= crate::lik::compute_s(flow, &q, &riemann)?.ln();
    }
    Ok(loss)
}

/// Batch-mean loss and exact gradients for all head and flow parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub loss: f64,
    pub d_head: Vec<f64>,
    /// Empty for kinds that do not use a flow.
    pub d_flow: Vec<f64>,
}

pub fn model_grad(
    head: &RegressionHead,
    flow: Option<&FlowModel>,
    kind: &LossKind,
    features: &Tensor2,
    mu_g: &Tensor2,
) -> Result<ModelGrads> {
    check_batch(head, features, mu_g)?;
    let (per_sample_kind, log_s_cfg) = split_log_s(kind);
    let n = features.rows();
    let d = head.out_dim();
    let zero_sigma = vec![0.0; d];
    let mut d_head = vec![0.0; head.param_count()];
    let mut d_flow = vec![0.0; flow.map_or(0, |f| f.param_count())];
    let mut total = 0.0;
    for r in 0..n {
        let (pred, cache) = head.forward_cached(features.row(r))?;
        let grads = loss_grad(
            &per_sample_kind,
            flow,
            mu_g.row(r),
            &pred.mu_hat,
            &pred.sigma_hat,
        )?;
        total += grads.loss;
        let d_sigma = if grads.d_sigma_hat.is_empty() {
            &zero_sigma
        } else {
            &grads.d_sigma_hat
        };
        let back = head.backward(&cache, &grads.d_mu_hat, d_sigma)?;
        for (acc, g) in d_head.iter_mut().zip(&back.param_grads) {
            *acc += g;
        }
        if !grads.d_flow.is_empty() {
            for (acc, g) in d_flow.iter_mut().zip(&grads.d_flow) {
                *acc += g;
            }
        }
    }
    let scale = 1.0 / n as f64;
    for g in d_head.iter_mut() {
        *g *= scale;
    }
    for g in d_flow.iter_mut() {
        *g *= scale;
    }
    let mut loss = total * scale;
    if let Some((q, riemann)) = log_s_cfg {
        let flow = flow.ok_or_else(|| Error::Config("rle requires a flow".into()))?;
        let (log_s, d_log_s) = crate::lik::log_s_with_grad(flow, &q, &riemann)?;
        loss -= log_s;
        for (g, ds) in d_flow.iter_mut().zip(&d_log_s) {
            *g -= ds;
        }
    }
    if !kind.needs_flow() {
        d_flow.clear();
    }
    Ok(ModelGrads {
        loss,
        d_head,
        d_flow,
    })
}
