//! The experiment configuration document: a schema-validated JSON file
//! binding the training budget, noise family, dataset sizes, seed list,
//! loss kinds, and output directory. Unknown keys are rejected with the
//! offending key path.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowArch;
use crate::lik::LossKind;
use crate::regress::TrunkArch;
use crate::synth::NoiseKind;
use crate::trainer::{BenchConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Training budget shared by every run of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sigma_max: f64,
    pub flow: FlowArch,
    pub trunk: TrunkArch,
    pub eval_every: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            sigma_max: t.sigma_max,
            flow: t.flow_arch,
            trunk: t.trunk_arch,
            eval_every: t.eval_every,
        }
    }
}

impl BudgetConfig {
    pub fn to_train_config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            sigma_max: self.sigma_max,
            flow_arch: self.flow,
            trunk_arch: self.trunk,
            eval_every: self.eval_every,
        }
    }
}

fn default_out_dir() -> String {
    "runs".into()
}

/// The whole experiment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub noise: NoiseKind,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub losses: Vec<LossKind>,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&raw);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::Config(format!("config error at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {} (expected {})",
                self.schema_version, CONFIG_VERSION
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("config needs at least one seed".into()));
        }
        if self.losses.is_empty() {
            return Err(Error::Config("config needs at least one loss".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be nonzero".into()));
        }
        self.budget
            .to_train_config(self.losses[0].clone(), self.seeds[0])
            .validate()
    }

    pub fn to_bench_config(&self) -> BenchConfig {
        BenchConfig {
            noise: self.noise,
            n_train: self.n_train,
            n_test: self.n_test,
            seeds: self.seeds.clone(),
            kinds: self.losses.clone(),
            train: self
                .budget
                .to_train_config(self.losses[0].clone(), self.seeds[0]),
        }
    }
}

/// Parse a loss label as used on the command line; `rle` defaults to the
/// Laplace base.
pub fn parse_loss_label(label: &str, dim: usize) -> Result<LossKind> {
    use crate::lik::BaseDensity;
    Ok(match label {
        "l2_const" => LossKind::L2Const,
        "l1_const" => LossKind::L1Const,
        "gaussian_nll" => LossKind::GaussianNll,
        "laplace_nll" => LossKind::LaplaceNll,
        "dle" => LossKind::Dle,
        "rle" | "rle_laplace" => LossKind::rle(BaseDensity::laplace(dim)),
        "rle_gaussian" => LossKind::rle(BaseDensity::gaussian(dim)),
        other => {
            return Err(Error::Config(format!(
                "unknown loss `{other}`; valid: l2_const, l1_const, gaussian_nll, \
                 laplace_nll, dle, rle, rle_laplace, rle_gaussian"
            )))
        }
    })
}
