use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::chemio::{CleaningConfig, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{TrainConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Everything a run needs, read from one JSON file.
///
/// `train.seed` drives the split, the parameter initialization and the
/// shuffle order. Paths are excluded from the hash so that identical runs
/// writing to different places still agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cleaning: CleaningConfig,
    pub split_fractions: [f64; 3],
    pub threshold: f64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cleaning: CleaningConfig::default(),
            split_fractions: [0.8, 0.1, 0.1],
            threshold: DEFAULT_THRESHOLD,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| !(f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must be positive and sum to 1",
                self.split_fractions
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        Ok(())
    }

    /// Copy with every path cleared, for storing beside outputs.
    pub fn without_paths(&self) -> RunConfig {
        RunConfig { paths: Paths::default(), ..self.clone() }
    }

    /// SHA-256 over the configuration without paths.
    pub fn hash(&self) -> String {
        let content = json!({
            "model": self.model,
            "train": self.train,
            "cleaning": self.cleaning,
            "split_fractions": self.split_fractions,
            "threshold": self.threshold,
        });
        hex::encode(Sha256::digest(content.to_string().as_bytes()))
    }

    /// Identifies a featurization: dataset contents plus the settings that shape the matrices.
    pub fn feature_hash(&self, ds: &Dataset) -> String {
        let content = json!({
            "dataset": ds.content_hash(),
            "variant": self.model.variant,
            "normalization": self.model.cm_normalization,
        });
        hex::encode(Sha256::digest(content.to_string().as_bytes()))
    }
}
