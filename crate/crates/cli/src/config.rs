use std::path::Path;

use perce_core::model::ModelConfig;
use perce_core::scoring::PromptTemplate;
use perce_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Model shape; `vocab_size` is derived from the corpus when omitted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub vocab_size: Option<usize>,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    /// Initialisation seed; follows `train.seed` when omitted.
    pub seed: Option<u64>,
    pub tie_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(1);
        Self {
            vocab_size: None,
            d_model: d.d_model,
            n_heads: d.n_heads,
            n_layers: d.n_layers,
            max_seq_len: d.max_seq_len,
            seed: None,
            tie_embeddings: d.tie_embeddings,
        }
    }
}

/// The `train` config file: `{"model": {..}, "train": {..}, "template": {..}}`,
/// every section optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub template: PromptTemplate,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; returns the raw bytes for hashing.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|_| CliError::Usage(format!("config not found: {}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Usage(format!("config {} is not UTF-8", path.display())))?;
        Ok((Self::from_json(&text)?, bytes))
    }

    /// Applies a `--seed` override to both initialisation and data order.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.model.seed = Some(s);
        }
        self
    }

    pub fn model_config(&self, vocab_len: usize) -> Result<ModelConfig, CliError> {
        if let Some(v) = self.model.vocab_size {
            if v != vocab_len {
                return Err(CliError::Usage(format!(
                    "model.vocab_size is {v} but the corpus and template need {vocab_len}"
                )));
            }
        }
        let m = &self.model;
        let cfg = ModelConfig {
            vocab_size: vocab_len,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            max_seq_len: m.max_seq_len,
            seed: m.seed.unwrap_or(self.train.seed),
            tie_embeddings: m.tie_embeddings,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
