//! Versioned JSON model document: the regression head and (for flow kinds)
//! the flow, with layer weights as nested arrays. Loading validates shapes,
//! finiteness, and the schema version.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{CouplingBlock, FlowModel};
use crate::lik::LossKind;
use crate::numcore::{LinearLayer, MlpParams, Tensor2};
use crate::regress::RegressionHead;
use crate::trainer::TrainedModel;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LayerDoc {
    fn from_layer(layer: &LinearLayer) -> Self {
        let rows = (0..layer.out_dim())
            .map(|r| layer.weight.row(r).to_vec())
            .collect();
        Self {
            weight: rows,
            bias: layer.bias.clone(),
        }
    }

    fn into_layer(self) -> Result<LinearLayer> {
        let rows = self.weight.len();
        let cols = self.weight.first().map_or(0, |r| r.len());
        if self.weight.iter().any(|r| r.len() != cols) {
            return Err(Error::Config("ragged weight matrix in snapshot".into()));
        }
        let data: Vec<f64> = self.weight.into_iter().flatten().collect();
        LinearLayer::new(Tensor2::from_vec(rows, cols, data)?, self.bias)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDoc {
    layers: Vec<LayerDoc>,
    slope: f64,
}

impl MlpDoc {
    fn from_mlp(mlp: &MlpParams) -> Self {
        Self {
            layers: mlp.layers().iter().map(LayerDoc::from_layer).collect(),
            slope: mlp.slope(),
        }
    }

    fn into_mlp(self) -> Result<MlpParams> {
        let layers = self
            .layers
            .into_iter()
            .map(LayerDoc::into_layer)
            .collect::<Result<Vec<_>>>()?;
        MlpParams::new(layers, self.slope)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    scale_net: MlpDoc,
    shift_net: MlpDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowDoc {
    dim: usize,
    blocks: Vec<BlockDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDoc {
    trunk: MlpDoc,
    mu_head: LayerDoc,
    sigma_head: LayerDoc,
    sigma_max: f64,
}

/// The on-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSnapshot {
    pub schema_version: u32,
    pub loss: LossKind,
    head: HeadDoc,
    flow: Option<FlowDoc>,
}

impl ModelSnapshot {
    pub fn from_model(model: &TrainedModel) -> Self {
        let head = HeadDoc {
            trunk: MlpDoc::from_mlp(model.head.trunk()),
            mu_head: LayerDoc::from_layer(model.head.mu_head()),
            sigma_head: LayerDoc::from_layer(model.head.sigma_head()),
            sigma_max: model.head.sigma_max(),
        };
        let flow = model.flow.as_ref().map(|f| FlowDoc {
            dim: f.dim(),
            blocks: f
                .blocks()
                .iter()
                .map(|b| BlockDoc {
                    scale_net: MlpDoc::from_mlp(b.scale_net()),
                    shift_net: MlpDoc::from_mlp(b.shift_net()),
                })
                .collect(),
        });
        Self {
            schema_version: SNAPSHOT_VERSION,
            loss: model.kind.clone(),
            head,
            flow,
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.schema_version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model schema_version {} (expected {})",
                self.schema_version, SNAPSHOT_VERSION
            )));
        }
        let head = RegressionHead::new(
            self.head.trunk.into_mlp()?,
            self.head.mu_head.into_layer()?,
            self.head.sigma_head.into_layer()?,
            self.head.sigma_max,
        )?;
        let flow = match self.flow {
            Some(doc) => {
                let blocks = doc
                    .blocks
                    .into_iter()
                    .map(|b| {
                        CouplingBlock::new(doc.dim, b.scale_net.into_mlp()?, b.shift_net.into_mlp()?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(FlowModel::new(doc.dim, blocks)?)
            }
            None => None,
        };
        if self.loss.needs_flow() && flow.is_none() {
            return Err(Error::Config(format!(
                "snapshot of kind {} is missing its flow",
                self.loss.label()
            )));
        }
        Ok(TrainedModel {
            head,
            flow,
            kind: self.loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read snapshot {}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&raw);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::Config(format!("bad model snapshot at {}: {e}", e.path())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lik::BaseDensity;
    use crate::synth::{gen_dataset, split_count, NoiseKind};
    use crate::trainer::{train_run, TrainConfig};

    fn trained() -> TrainedModel {
        let ds = gen_dataset(NoiseKind::GaussianHetero, 96, 0).unwrap();
        let (train, test) = split_count(&ds, 64, 0).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::rle(BaseDensity::laplace(2)),
            epochs: 2,
            batch_size: 32,
            flow_arch: crate::flow::FlowArch {
                blocks: 2,
                layers: 2,
                width: 8,
            },
            trunk_arch: crate::regress::TrunkArch {
                layers: 1,
                width: 8,
            },
            ..TrainConfig::default()
        };
        train_run(&cfg, &train, &test).unwrap().1
    }

    #[test]
    fn snapshot_round_trip_preserves_the_model() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ModelSnapshot::from_model(&model).save(&path).unwrap();
        let back = ModelSnapshot::load(&path).unwrap().into_model().unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let model = trained();
        let mut snap = ModelSnapshot::from_model(&model);
        snap.schema_version = 99;
        assert!(snap.into_model().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ModelSnapshot::from_model(&model).save(&path).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        doc["surprise"] = serde_json::json!(1);
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        let err = ModelSnapshot::load(&path).unwrap_err();
        assert!(err.to_string().contains("surprise"));
    }
}
