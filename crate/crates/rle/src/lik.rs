//! The loss ladder: constant-variance losses, parametric negative
//! log-likelihoods, direct likelihood estimation through a flow (DLE),
//! residual log-likelihood estimation (RLE), the product normalizer `s`,
//! and the confidence score.
//!
//! All losses retain their normalization constants (half-log-2-pi, ln 2) so
//! values are comparable across kinds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;

pub const LN_2PI: f64 = 1.8378770664093453;
pub const HALF_LN_2PI: f64 = 0.9189385332046727;

/// Scales below this floor signal a collapsed head and are surfaced as
/// errors rather than clamped away.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Anything with an evaluable log-density; lets quadrature and divergence
/// code treat flows, parametric bases, and composites uniformly.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> Result<f64>;
}

impl LogDensity for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_prob(x)
    }
}

/// Standard normal in `dim` dimensions; the density an identity-initialised
/// flow evaluates to, available for any `dim` (a flow itself needs dim >= 2).
#[derive(Debug, Clone, Copy)]
pub struct StdNormal {
    pub dim: usize,
}

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape("StdNormal dim mismatch".into()));
        }
        let sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(-(self.dim as f64) * HALF_LN_2PI - 0.5 * sq)
    }
}

/// Preset base families for the residual split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFamily {
    Gaussian,
    Laplace,
}

/// Unit-scale, zero-mean base density over `dim` independent coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDensity {
    pub family: BaseFamily,
    pub dim: usize,
}

impl BaseDensity {
    pub fn gaussian(dim: usize) -> Self {
        Self {
            family: BaseFamily::Gaussian,
            dim,
        }
    }

    pub fn laplace(dim: usize) -> Self {
        Self {
            family: BaseFamily::Laplace,
            dim,
        }
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "base density dim {} applied to vector of length {}",
                self.dim,
                x.len()
            )));
        }
        Ok(match self.family {
            BaseFamily::Gaussian => x.iter().map(|v| -HALF_LN_2PI - 0.5 * v * v).sum(),
            BaseFamily::Laplace => x.iter().map(|v| -std::f64::consts::LN_2 - v.abs()).sum(),
        })
    }

    /// Gradient of the log-density with respect to the point.
    pub fn log_prob_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape("base density dim mismatch".into()));
        }
        Ok(match self.family {
            BaseFamily::Gaussian => x.iter().map(|&v| -v).collect(),
            BaseFamily::Laplace => x.iter().map(|&v| -sign(v)).collect(),
        })
    }
}

impl LogDensity for BaseDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_prob(x)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Right-endpoint Riemann grid for the normalizer `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiemannCfg {
    pub lower: f64,
    pub upper: f64,
    pub subintervals_per_dim: usize,
}

impl Default for RiemannCfg {
    fn default() -> Self {
        Self {
            lower: -5.0,
            upper: 5.0,
            subintervals_per_dim: 100,
        }
    }
}

impl RiemannCfg {
    pub fn new(lower: f64, upper: f64, subintervals_per_dim: usize) -> Result<Self> {
        let cfg = Self {
            lower,
            upper,
            subintervals_per_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) {
            return Err(Error::Config(format!(
                "Riemann interval [{}, {}] is empty",
                self.lower, self.upper
            )));
        }
        if self.subintervals_per_dim < 2 {
            return Err(Error::Config(
                "Riemann grid needs at least 2 subintervals per dimension".into(),
            ));
        }
        Ok(())
    }
}

/// The full ladder of training objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Gaussian with variance fixed at 1: the l2 regression baseline.
    L2Const,
    /// Laplace with scale fixed at 1: the l1 regression baseline.
    L1Const,
    /// Gaussian with learnable per-dimension scale.
    GaussianNll,
    /// Laplace with learnable per-dimension scale.
    LaplaceNll,
    /// Reparameterized direct likelihood estimation through the flow.
    Dle,
    /// Residual split: preset base `q` plus the flow-learned correction.
    Rle {
        q: BaseDensity,
        #[serde(default)]
        include_log_s: bool,
        #[serde(default)]
        riemann: RiemannCfg,
    },
}

impl LossKind {
    pub fn rle(q: BaseDensity) -> Self {
        LossKind::Rle {
            q,
            include_log_s: false,
            riemann: RiemannCfg::default(),
        }
    }

    pub fn needs_flow(&self) -> bool {
        matches!(self, LossKind::Dle | LossKind::Rle { .. })
    }

    /// Whether the scale head receives gradient under this objective.
    pub fn learns_sigma(&self) -> bool {
        !matches!(self, LossKind::L2Const | LossKind::L1Const)
    }

    /// Stable label used in tables, file names and summaries.
    pub fn label(&self) -> String {
        match self {
            LossKind::L2Const => "l2_const".into(),
            LossKind::L1Const => "l1_const".into(),
            LossKind::GaussianNll => "gaussian_nll".into(),
            LossKind::LaplaceNll => "laplace_nll".into(),
            LossKind::Dle => "dle".into(),
            LossKind::Rle { q, .. } => match q.family {
                BaseFamily::Gaussian => "rle_gaussian".into(),
                BaseFamily::Laplace => "rle_laplace".into(),
            },
        }
    }
}

/// Log-density of the base term of `q`.
pub fn base_log_prob(q: &BaseDensity, x: &[f64]) -> Result<f64> {
    q.log_prob(x)
}

fn check_triple(mu_g: &[f64], mu_hat: &[f64], sigma_hat: &[f64]) -> Result<()> {
    if mu_g.len() != mu_hat.len() || mu_g.len() != sigma_hat.len() {
        return Err(Error::Shape(format!(
            "mu_g / mu_hat / sigma_hat lengths differ: {} / {} / {}",
            mu_g.len(),
            mu_hat.len(),
            sigma_hat.len()
        )));
    }
    Ok(())
}

fn check_sigma_positive(sigma_hat: &[f64]) -> Result<()> {
    if let Some(i) = sigma_hat.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::SigmaOutOfRange(format!(
            "sigma_hat[{}] = {} must be > 0",
            i, sigma_hat[i]
        )));
    }
    Ok(())
}

/// Elementwise `(mu_g - mu_hat) / sigma_hat`. Scales at or below the
/// `SIGMA_FLOOR` clamp floor signal head collapse and error out.
pub fn standardize(mu_g: &[f64], mu_hat: &[f64], sigma_hat: &[f64]) -> Result<Vec<f64>> {
    check_triple(mu_g, mu_hat, sigma_hat)?;
    if let Some(i) = sigma_hat.iter().position(|&s| !(s > SIGMA_FLOOR)) {
        return Err(Error::SigmaOutOfRange(format!(
            "sigma_hat[{}] = {} at or below clamp floor {}",
            i, sigma_hat[i], SIGMA_FLOOR
        )));
    }
    Ok(mu_g
        .iter()
        .zip(mu_hat)
        .zip(sigma_hat)
        .map(|((g, m), s)| (g - m) / s)
        .collect())
}

/// Gaussian NLL with the per-dimension half-log-2-pi constant retained.
pub fn nll_gaussian(mu_g: &[f64], mu_hat: &[f64], sigma_hat: &[f64]) -> Result<f64> {
    check_triple(mu_g, mu_hat, sigma_hat)?;
    check_sigma_positive(sigma_hat)?;
    Ok(mu_g
        .iter()
        .zip(mu_hat)
        .zip(sigma_hat)
        .map(|((g, m), s)| {
            let r = g - m;
            HALF_LN_2PI + s.ln() + r * r / (2.0 * s * s)
        })
        .sum())
}

/// Laplace NLL with the ln-2 constant retained.
pub fn nll_laplace(mu_g: &[f64], mu_hat: &[f64], sigma_hat: &[f64]) -> Result<f64> {
    check_triple(mu_g, mu_hat, sigma_hat)?;
    check_sigma_positive(sigma_hat)?;
    Ok(mu_g
        .iter()
        .zip(mu_hat)
        .zip(sigma_hat)
        .map(|((g, m), s)| (2.0 * s).ln() + (g - m).abs() / s)
        .sum())
}

/// Reparameterized direct likelihood: `-log P_flow(std) + sum(ln sigma_hat)`.
pub fn loss_dle(
    flow: &FlowModel,
    mu_g: &[f64],
    mu_hat: &[f64],
    sigma_hat: &[f64],
) -> Result<f64> {
    if flow.dim() != mu_g.len() {
        return Err(Error::Shape(format!(
            "flow dim {} != vector dim {}",
            flow.dim(),
            mu_g.len()
        )));
    }
    let std = standardize(mu_g, mu_hat, sigma_hat)?;
    let log_sigma: f64 = sigma_hat.iter().map(|s| s.ln()).sum();
    Ok(-flow.log_prob(&std)? + log_sigma)
}

/// Residual objective: `-log Q(std) - log P_flow(std) + sum(ln sigma_hat)`,
/// minus `log s` only when `include_log_s` is set (default off).
#[allow(clippy::too_many_arguments)]
pub fn loss_rle(
    flow: &FlowModel,
    q: &BaseDensity,
    mu_g: &[f64],
    mu_hat: &[f64],
    sigma_hat: &[f64],
    include_log_s: bool,
    riemann: &RiemannCfg,
) -> Result<f64> {
    if flow.dim() != mu_g.len() || q.dim != mu_g.len() {
        return Err(Error::Shape(format!(
            "flow dim {} / base dim {} / vector dim {} disagree",
            flow.dim(),
            q.dim,
            mu_g.len()
        )));
    }
    let std = standardize(mu_g, mu_hat, sigma_hat)?;
    let log_sigma: f64 = sigma_hat.iter().map(|s| s.ln()).sum();
    let mut loss = -q.log_prob(&std)? - flow.log_prob(&std)? + log_sigma;
    if include_log_s {
        let s = compute_s(flow, q, riemann)?;
        loss -= s.ln();
    }
    Ok(loss)
}

/// The normalizer `s = 1 / integral(G * Q)`, approximated by a
/// right-endpoint Riemann sum over `[lower, upper]^dim`, `dim <= 2`.
///
/// `g_model` is anything with a log-density; it takes no regression-head
/// inputs, so `s` depends on the flow parameters alone.
pub fn compute_s<G: LogDensity + ?Sized>(
    g_model: &G,
    q: &BaseDensity,
    riemann: &RiemannCfg,
) -> Result<f64> {
    riemann.validate()?;
    let dim = g_model.dim();
    if dim != q.dim {
        return Err(Error::Shape(format!(
            "model dim {} != base dim {}",
            dim, q.dim
        )));
    }
    if dim > 2 {
        return Err(Error::Quadrature(format!(
            "grid quadrature supports dim <= 2, got {dim}"
        )));
    }
    let n = riemann.subintervals_per_dim;
    let step = (riemann.upper - riemann.lower) / n as f64;
    let mut integral = 0.0;
    match dim {
        1 => {
            for i in 1..=n {
                let x = [riemann.lower + i as f64 * step];
                integral += (g_model.log_density(&x)? + q.log_prob(&x)?).exp();
            }
            integral *= step;
        }
        2 => {
            for i in 1..=n {
                let xi = riemann.lower + i as f64 * step;
                for j in 1..=n {
                    let x = [xi, riemann.lower + j as f64 * step];
                    integral += (g_model.log_density(&x)? + q.log_prob(&x)?).exp();
                }
            }
            integral *= step * step;
        }
        _ => unreachable!(),
    }
    if !(integral.is_finite() && integral > 0.0) {
        return Err(Error::Quadrature(format!(
            "product integral is {integral}; all mass outside [{}, {}]?",
            riemann.lower, riemann.upper
        )));
    }
    Ok(1.0 / integral)
}

/// `log s` together with its gradient with respect to the flow parameters.
///
/// With `I = integral(G * Q)`: `d log s / d phi = -(1/I) * sum_grid
/// w * G * Q * d log G / d phi`.
pub fn log_s_with_grad(
    flow: &FlowModel,
    q: &BaseDensity,
    riemann: &RiemannCfg,
) -> Result<(f64, Vec<f64>)> {
    riemann.validate()?;
    if flow.dim() != q.dim || flow.dim() != 2 {
        return Err(Error::Quadrature(
            "log-s gradient is implemented for dim 2 flows".into(),
        ));
    }
    let n = riemann.subintervals_per_dim;
    let step = (riemann.upper - riemann.lower) / n as f64;
    let w = step * step;
    let mut integral = 0.0;
    let mut weighted_grad = vec![0.0; flow.param_count()];
    for i in 1..=n {
        let xi = riemann.lower + i as f64 * step;
        for j in 1..=n {
            let x = [xi, riemann.lower + j as f64 * step];
            let lq = q.log_prob(&x)?;
            let (_, mass) =
                flow.log_prob_grad_weighted(&x, |lp| (lp + lq).exp() * w, &mut weighted_grad)?;
            integral += mass;
        }
    }
    if !(integral.is_finite() && integral > 0.0) {
        return Err(Error::Quadrature(format!(
            "product integral is {integral}; all mass outside [{}, {}]?",
            riemann.lower, riemann.upper
        )));
    }
    let log_s = -integral.ln();
    for gi in weighted_grad.iter_mut() {
        *gi = -*gi / integral;
    }
    Ok((log_s, weighted_grad))
}

/// Confidence `1 - mean(sigma_hat) / sigma_max`, in (0, 1).
pub fn confidence(sigma_hat: &[f64], sigma_max: f64) -> Result<f64> {
    if sigma_hat.is_empty() {
        return Err(Error::Empty("confidence needs at least one scale".into()));
    }
    if let Some(i) = sigma_hat
        .iter()
        .position(|&s| !(s > 0.0 && s < sigma_max))
    {
        return Err(Error::SigmaOutOfRange(format!(
            "sigma_hat[{}] = {} outside (0, {})",
            i, sigma_hat[i], sigma_max
        )));
    }
    let mean: f64 = sigma_hat.iter().sum::<f64>() / sigma_hat.len() as f64;
    Ok(1.0 - mean / sigma_max)
}

/// Gradients of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub d_mu_hat: Vec<f64>,
    pub d_sigma_hat: Vec<f64>,
    /// Flat flow gradient; empty for kinds without a flow.
    pub d_flow: Vec<f64>,
}

/// Value of the selected loss (dispatch helper over the ladder).
pub fn loss_value(
    kind: &LossKind,
    flow: Option<&FlowModel>,
    mu_g: &[f64],
    mu_hat: &[f64],
    sigma_hat: &[f64],
) -> Result<f64> {
    let ones = vec![1.0; mu_g.len()];
    match kind {
        LossKind::L2Const => nll_gaussian(mu_g, mu_hat, &ones),
        LossKind::L1Const => nll_laplace(mu_g, mu_hat, &ones),
        LossKind::GaussianNll => nll_gaussian(mu_g, mu_hat, sigma_hat),
        LossKind::LaplaceNll => nll_laplace(mu_g, mu_hat, sigma_hat),
        LossKind::Dle => {
            let flow = flow.ok_or_else(|| Error::Config("dle requires a flow".into()))?;
            loss_dle(flow, mu_g, mu_hat, sigma_hat)
        }
        LossKind::Rle {
            q,
            include_log_s,
            riemann,
        } => {
            let flow = flow.ok_or_else(|| Error::Config("rle requires a flow".into()))?;
            loss_rle(flow, q, mu_g, mu_hat, sigma_hat, *include_log_s, riemann)
        }
    }
}

/// Exact gradients of the selected loss with respect to `mu_hat`,
/// `sigma_hat` and the flow parameters. Constant-variance kinds return
/// empty scale and flow gradients.
pub fn loss_grad(
    kind: &LossKind,
    flow: Option<&FlowModel>,
    mu_g: &[f64],
    mu_hat: &[f64],
    sigma_hat: &[f64],
) -> Result<LossGrads> {
    check_triple(mu_g, mu_hat, sigma_hat)?;
    let d = mu_g.len();
    match kind {
        LossKind::L2Const => {
            let ones = vec![1.0; d];
            let loss = nll_gaussian(mu_g, mu_hat, &ones)?;
            let d_mu_hat = mu_g.iter().zip(mu_hat).map(|(g, m)| m - g).collect();
            Ok(LossGrads {
                loss,
                d_mu_hat,
                d_sigma_hat: Vec::new(),
                d_flow: Vec::new(),
            })
        }
        LossKind::L1Const => {
            let ones = vec![1.0; d];
            let loss = nll_laplace(mu_g, mu_hat, &ones)?;
            let d_mu_hat = mu_g.iter().zip(mu_hat).map(|(g, m)| -sign(g - m)).collect();
            Ok(LossGrads {
                loss,
                d_mu_hat,
                d_sigma_hat: Vec::new(),
                d_flow: Vec::new(),
            })
        }
        LossKind::GaussianNll => {
            let loss = nll_gaussian(mu_g, mu_hat, sigma_hat)?;
            let mut d_mu_hat = vec![0.0; d];
            let mut d_sigma_hat = vec![0.0; d];
            for i in 0..d {
                let r = mu_g[i] - mu_hat[i];
                let s = sigma_hat[i];
                d_mu_hat[i] = -r / (s * s);
                d_sigma_hat[i] = 1.0 / s - r * r / (s * s * s);
            }
            Ok(LossGrads {
                loss,
                d_mu_hat,
                d_sigma_hat,
                d_flow: Vec::new(),
            })
        }
        LossKind::LaplaceNll => {
            let loss = nll_laplace(mu_g, mu_hat, sigma_hat)?;
            let mut d_mu_hat = vec![0.0; d];
            let mut d_sigma_hat = vec![0.0; d];
            for i in 0..d {
                let r = mu_g[i] - mu_hat[i];
                let s = sigma_hat[i];
                d_mu_hat[i] = -sign(r) / s;
                d_sigma_hat[i] = 1.0 / s - r.abs() / (s * s);
            }
            Ok(LossGrads {
                loss,
                d_mu_hat,
                d_sigma_hat,
                d_flow: Vec::new(),
            })
        }
        LossKind::Dle => {
            let flow = flow.ok_or_else(|| Error::Config("dle requires a flow".into()))?;
            flow_loss_grad(flow, None, mu_g, mu_hat, sigma_hat, false, None)
        }
        LossKind::Rle {
            q,
            include_log_s,
            riemann,
        } => {
            let flow = flow.ok_or_else(|| Error::Config("rle requires a flow".into()))?;
            flow_loss_grad(
                flow,
                Some(q),
                mu_g,
                mu_hat,
                sigma_hat,
                *include_log_s,
                Some(riemann),
            )
        }
    }
}

/// Shared gradient path of DLE and RLE: backpropagation through the
/// standardization into the flow (and the base term, when present).
fn flow_loss_grad(
    flow: &FlowModel,
    q: Option<&BaseDensity>,
    mu_g: &[f64],
    mu_hat: &[f64],
    sigma_hat: &[f64],
    include_log_s: bool,
    riemann: Option<&RiemannCfg>,
) -> Result<LossGrads> {
    if flow.dim() != mu_g.len() {
        return Err(Error::Shape(format!(
            "flow dim {} != vector dim {}",
            flow.dim(),
            mu_g.len()
        )));
    }
    let d = mu_g.len();
    let std = standardize(mu_g, mu_hat, sigma_hat)?;
    let fg = flow.log_prob_with_grad(&std)?;
    let log_sigma: f64 = sigma_hat.iter().map(|s| s.ln()).sum();

    let mut loss = -fg.log_prob + log_sigma;
    // d(loss)/d(std): minus the flow term, plus the base term for RLE.
    let mut d_std: Vec<f64> = fg.grad_x.iter().map(|&g| -g).collect();
    if let Some(q) = q {
        loss -= q.log_prob(&std)?;
        let qg = q.log_prob_grad(&std)?;
        for (ds, dq) in d_std.iter_mut().zip(&qg) {
            *ds -= dq;
        }
    }

    // std_i = (mu_g_i - mu_hat_i) / sigma_hat_i
    let mut d_mu_hat = vec![0.0; d];
    let mut d_sigma_hat = vec![0.0; d];
    for i in 0..d {
        d_mu_hat[i] = -d_std[i] / sigma_hat[i];
        d_sigma_hat[i] = -d_std[i] * std[i] / sigma_hat[i] + 1.0 / sigma_hat[i];
    }
    let mut d_flow: Vec<f64> = fg.grad_params.iter().map(|&g| -g).collect();

    if include_log_s {
        let q = q.ok_or_else(|| Error::Config("log-s term needs a base density".into()))?;
        let riemann = riemann.unwrap();
        let (log_s, d_log_s) = log_s_with_grad(flow, q, riemann)?;
        loss -= log_s;
        for (df, dls) in d_flow.iter_mut().zip(&d_log_s) {
            *df -= dls;
        }
    }

    Ok(LossGrads {
        loss,
        d_mu_hat,
        d_sigma_hat,
        d_flow,
    })
}
