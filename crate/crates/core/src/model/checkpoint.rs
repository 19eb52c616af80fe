//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "perce-checkpoint-v1",
//!   "config":   { "vocab_size": .., "d_model": .., "n_heads": .., "n_layers": ..,
//!                 "max_seq_len": .., "seed": .., "tie_embeddings": false },
//!   "vocab":    ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>", ...],
//!   "template": { "persona_header": .., "instruction": .., "query_header": ..,
//!                 "response_delimiter": .. },
//!   "tensors":  [ { "name": "tok_emb", "shape": [V, D], "data": [..row-major f64..] }, ... ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams, NamedTensor};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scoring::PromptTemplate;

pub const CHECKPOINT_FORMAT: &str = "perce-checkpoint-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    vocab: Vec<String>,
    #[serde(default)]
    template: PromptTemplate,
    tensors: Vec<TensorRecord>,
}

/// Everything needed to score text with a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub template: PromptTemplate,
}

impl Checkpoint {
    pub fn to_json_string(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            config: self.params.config().clone(),
            vocab: self.vocab.tokens().to_vec(),
            template: self.template.clone(),
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|t| TensorRecord {
                    name: t.name.clone(),
                    shape: t.tensor.shape().to_vec(),
                    data: t.tensor.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
        }
        let vocab = Vocab::from_tokens(file.vocab)?;
        if vocab.len() != file.config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocab has {} entries but config says {}",
                vocab.len(),
                file.config.vocab_size
            )));
        }
        let tensors = file
            .tensors
            .into_iter()
            .map(|r| {
                Ok(NamedTensor {
                    tensor: Tensor::new(r.shape, r.data)
                        .map_err(|e| Error::Checkpoint(format!("{}: {e}", r.name)))?,
                    name: r.name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: ModelParams::from_tensors(file.config, tensors)?,
            vocab,
            template: file.template,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}
