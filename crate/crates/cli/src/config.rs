use std::path::Path;

use serde::{Deserialize, Serialize};
use sgrisk_core::model::ModelConfig;
use sgrisk_core::pipeline::TrainConfig;
use sgrisk_core::scenegen::ScenarioSpec;
use sgrisk_core::scenegraph::GraphConfig;
use sgrisk_core::{Error, Result};

/// Everything a run depends on. Missing sections and fields take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub generator: ScenarioSpec,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.graph.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// A global seed drives both generation and training.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.generator.seed = s;
            self.train.seed = s;
        }
        self
    }

    /// Writes the resolved configuration as pretty JSON.
    pub fn snapshot(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_document_fills_defaults() {
        let c: RunConfigFile = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model, ModelConfig::default());
        let round: RunConfigFile = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfigFile>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfigFile>(r#"{"train": {"epoch": 3}}"#).is_err());
    }
}
