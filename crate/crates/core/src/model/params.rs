use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Standard deviation of the Gaussian used for embeddings and projections.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Reuse the token embedding as the output projection.
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// The default desk-scale shape: d_model 64, 2 layers, 2 heads, 256 positions.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            max_seq_len: 256,
            seed: 0,
            tie_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Tensors per transformer block, in storage order.
pub(crate) const BLOCK_LEN: usize = 12;

pub(crate) mod slot {
    pub const TOK_EMB: usize = 0;
    pub const POS_EMB: usize = 1;
    pub const FIRST_BLOCK: usize = 2;
    // Offsets within a block.
    pub const LN1_SCALE: usize = 0;
    pub const LN1_SHIFT: usize = 1;
    pub const ATTN_Q: usize = 2;
    pub const ATTN_K: usize = 3;
    pub const ATTN_V: usize = 4;
    pub const ATTN_O: usize = 5;
    pub const LN2_SCALE: usize = 6;
    pub const LN2_SHIFT: usize = 7;
    pub const MLP_IN: usize = 8;
    pub const MLP_IN_BIAS: usize = 9;
    pub const MLP_OUT: usize = 10;
    pub const MLP_OUT_BIAS: usize = 11;
}

fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, h) = (c.vocab_size, c.d_model, 4 * c.d_model);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d], Init::Normal),
        ("pos_emb".to_string(), vec![c.max_seq_len, d], Init::Normal),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("ln1.scale"), vec![d], Init::Ones),
            (p("ln1.shift"), vec![d], Init::Zeros),
            (p("attn.q"), vec![d, d], Init::Normal),
            (p("attn.k"), vec![d, d], Init::Normal),
            (p("attn.v"), vec![d, d], Init::Normal),
            (p("attn.o"), vec![d, d], Init::Normal),
            (p("ln2.scale"), vec![d], Init::Ones),
            (p("ln2.shift"), vec![d], Init::Zeros),
            (p("mlp.in"), vec![d, h], Init::Normal),
            (p("mlp.in_bias"), vec![h], Init::Zeros),
            (p("mlp.out"), vec![h, d], Init::Normal),
            (p("mlp.out_bias"), vec![d], Init::Zeros),
        ]);
    }
    out.push(("ln_f.scale".into(), vec![d], Init::Ones));
    out.push(("ln_f.shift".into(), vec![d], Init::Zeros));
    if !c.tie_embeddings {
        out.push(("lm_head".into(), vec![d, v], Init::Normal));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// All learnable tensors of the transformer, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    /// Deterministic initialisation from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = layout(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                NamedTensor {
                    name,
                    tensor: Tensor::new(shape, data).expect("layout shapes are consistent"),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), t) in expected.iter().zip(&tensors) {
            if *name != t.name || shape.as_slice() != t.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    t.name,
                    t.tensor.shape()
                )));
            }
            if !t.tensor.is_finite() {
                return Err(Error::NonFinite(t.name.clone()));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.tensor.is_finite())
    }

    /// Locates the `flat`-th scalar across all tensors (in storage order).
    pub fn locate(&self, mut flat: usize) -> Option<(usize, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.tensor.numel() {
                return Some((i, flat));
            }
            flat -= t.tensor.numel();
        }
        None
    }

    pub(crate) fn lm_head_slot(&self) -> Option<usize> {
        (!self.config.tie_embeddings).then(|| self.tensors.len() - 1)
    }

    pub(crate) fn final_norm_slot(&self) -> usize {
        slot::FIRST_BLOCK + BLOCK_LEN * self.config.n_layers
    }
}
