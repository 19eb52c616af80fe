use std::collections::HashMap;

use super::{check_tokens, Forward, LanguageModel};
use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor};

/// A model with hand-specified next-token distributions.
///
/// The distribution after a prefix is looked up by the exact prefix
/// `tokens[..=t]`, falling back to a default row. There is no attention and
/// no parameter; it exists so scoring and loss code can be checked against
/// closed-form probabilities.
#[derive(Clone, Debug)]
pub struct LookupTableModel {
    vocab_size: usize,
    max_seq_len: usize,
    default: Vec<f64>,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
}

fn to_log(probs: &[f64], vocab_size: usize) -> Result<Vec<f64>> {
    if probs.len() != vocab_size {
        return Err(Error::dim(format!(
            "distribution over {} tokens for vocab {vocab_size}",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("not a distribution (sum {total})")));
    }
    Ok(probs.iter().map(|p| p.ln()).collect())
}

impl LookupTableModel {
    pub fn new(vocab_size: usize, max_seq_len: usize, default_probs: &[f64]) -> Result<Self> {
        Ok(Self {
            vocab_size,
            max_seq_len,
            default: to_log(default_probs, vocab_size)?,
            rows: HashMap::new(),
        })
    }

    pub fn uniform(vocab_size: usize, max_seq_len: usize) -> Self {
        let p = vec![1.0 / vocab_size as f64; vocab_size];
        Self::new(vocab_size, max_seq_len, &p).expect("uniform is a distribution")
    }

    /// Sets the next-token distribution after exactly `prefix`.
    pub fn with_row(mut self, prefix: Vec<TokenId>, probs: &[f64]) -> Result<Self> {
        let row = to_log(probs, self.vocab_size)?;
        self.rows.insert(prefix, row);
        Ok(self)
    }
}

impl LanguageModel for LookupTableModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    fn forward_tape(&self, tape: &mut Tape, tokens: &[TokenId], _track_grad: bool) -> Result<Forward> {
        check_tokens(tokens, self.vocab_size, self.max_seq_len)?;
        let mut data = Vec::with_capacity(tokens.len() * self.vocab_size);
        for t in 0..tokens.len() {
            data.extend_from_slice(self.rows.get(&tokens[..=t]).unwrap_or(&self.default));
        }
        let log_probs = tape.constant(Tensor::new([tokens.len(), self.vocab_size], data)?);
        Ok(Forward {
            log_probs,
            params: Vec::new(),
        })
    }
}
