//! One declarative file configuring every pipeline stage (JSON or TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusFormat;
use crate::ensemble::TieBreak;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, DEFAULT_CHECKPOINTS};
use crate::split::SplitSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestSection,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ensemble: EnsembleSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Inferred from the file extension when absent.
    pub format: Option<CorpusFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Run directory name under `<out>/runs/`.
    pub name: String,
    #[serde(flatten)]
    pub params: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { name: "default".into(), params: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { batch_size: 32 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Member run directories.
    pub members: Vec<PathBuf>,
    pub tie_break: TieBreak,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(DEFAULT_CHECKPOINTS[0])
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        self.train.params.validate()?;
        if self.eval.batch_size == 0 {
            return Err(Error::InvalidConfig("eval.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(self).unwrap().as_bytes())
    }
}
