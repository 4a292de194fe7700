use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};
use crate::scenegraph::NodeKind;

use super::config::ModelConfig;
use super::network::RiskModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epoch the parameters were taken from; 0 is the initialization.
    pub epoch: usize,
    pub val_loss: Option<f64>,
    #[serde(default)]
    pub class_weights: Option<[f64; 2]>,
}

/// Self-describing JSON snapshot of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: ModelConfig,
    pub vocab: Vec<NodeKind>,
    pub parameters: BTreeMap<String, ParamArray>,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &RiskModel<S>, training: TrainingMeta) -> Self {
        let parameters = model
            .params
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    ParamArray {
                        shape: t.shape().to_vec(),
                        data: t.data().iter().map(|v| v.as_f64()).collect(),
                    },
                )
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            architecture: model.config().clone(),
            vocab: model.config().vocab.clone(),
            parameters,
            training,
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<RiskModel<S>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Input(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.vocab != self.architecture.vocab {
            return Err(Error::Input("checkpoint vocab disagrees with its architecture".into()));
        }
        let mut model = RiskModel::new(self.architecture.clone(), 0)?;
        let values = self
            .parameters
            .iter()
            .map(|(k, p)| {
                let data = p.data.iter().map(|&v| S::lit(v)).collect();
                Ok((k.clone(), Tensor::new(p.shape.clone(), data)?))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        model.load_params(values)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
