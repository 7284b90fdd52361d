//! Uniform 2-D grid evaluation: midpoint quadrature, normalization mass,
//! and discrete KL between densities sampled on the same grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density values below this floor are clipped before any logarithm.
pub const DENSITY_CLIP: f64 = 1e-300;

/// A square evaluation grid: `per_dim` cell-centered points per axis over
/// `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub per_dim: usize,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, per_dim: usize) -> Result<Self> {
        let spec = Self {
            lower,
            upper,
            per_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) {
            return Err(Error::Config(format!(
                "grid interval [{}, {}] is empty",
                self.lower, self.upper
            )));
        }
        if self.per_dim < 2 {
            return Err(Error::Config("grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / self.per_dim as f64
    }

    pub fn cell_area(&self) -> f64 {
        let s = self.step();
        s * s
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.step()
    }

    /// Row-major cell centers: the first coordinate varies slowest.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let n = self.per_dim;
        let mut pts = Vec::with_capacity(n * n);
        for i in 0..n {
            let x = self.center(i);
            for j in 0..n {
                pts.push([x, self.center(j)]);
            }
        }
        pts
    }
}

/// Evaluate a log-density at every cell center, row-major. Evaluation runs
/// in parallel; the output order (and therefore any later reduction) is
/// deterministic.
pub fn eval_log_grid<F>(f: F, spec: &GridSpec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    spec.validate()?;
    spec.points()
        .par_iter()
        .map(|p| f(&p[..]))
        .collect::<Result<Vec<f64>>>()
}

/// Midpoint-rule mass of `exp(log density)` over the grid.
pub fn grid_mass(log_values: &[f64], spec: &GridSpec) -> f64 {
    let cell = spec.cell_area();
    log_values.iter().map(|lp| lp.exp()).sum::<f64>() * cell
}

/// KL divergence between two densities sampled on the same uniform grid.
///
/// Both are renormalized over the grid before comparison, so this is a true
/// discrete KL: non-negative by construction and exactly zero for identical
/// inputs. Learned values are clipped at [`DENSITY_CLIP`] before the log.
pub fn grid_kl(log_true: &[f64], log_learned: &[f64]) -> Result<f64> {
    if log_true.len() != log_learned.len() || log_true.is_empty() {
        return Err(Error::Shape(format!(
            "grid KL over {} vs {} values",
            log_true.len(),
            log_learned.len()
        )));
    }
    let p: Vec<f64> = log_true.iter().map(|lp| lp.exp()).collect();
    let q: Vec<f64> = log_learned
        .iter()
        .map(|lq| lq.exp().max(DENSITY_CLIP))
        .collect();
    let p_sum: f64 = p.iter().sum();
    let q_sum: f64 = q.iter().sum();
    if !(p_sum > 0.0 && p_sum.is_finite() && q_sum > 0.0 && q_sum.is_finite()) {
        return Err(Error::Quadrature(format!(
            "grid masses {p_sum} / {q_sum} unusable for KL"
        )));
    }
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        let pn = pi / p_sum;
        if pn > 0.0 {
            kl += pn * (pn / (qi / q_sum)).ln();
        }
    }
    Ok(kl.max(0.0))
}
