use serde::{Deserialize, Serialize};

use super::template::RenderedExample;
use crate::error::{Error, Result};
use crate::model::{seq_log_probs, LanguageModel};

/// Threshold above which a token counts as personal.
pub const DEFAULT_PERSONAL_THRESHOLD: f64 = 1.0;

/// Per-response-token log-probability gain from the persona.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PirScores {
    pub values: Vec<f64>,
    pub context_with_len: usize,
    pub context_without_len: usize,
}

impl PirScores {
    /// `values[i] = with[i] - without[i]`.
    pub fn from_log_probs(
        with: &[f64],
        without: &[f64],
        context_with_len: usize,
        context_without_len: usize,
    ) -> Result<Self> {
        if with.len() != without.len() {
            return Err(Error::contract(format!(
                "{} persona-conditioned vs {} persona-removed log-probs",
                with.len(),
                without.len()
            )));
        }
        if context_without_len > context_with_len {
            return Err(Error::contract("persona-removed context is longer than the full one"));
        }
        let values: Vec<f64> = with.iter().zip(without).map(|(a, b)| a - b).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PIR scores".into()));
        }
        Ok(Self {
            values,
            context_with_len,
            context_without_len,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Scores every response token with two teacher-forced passes of `model`.
pub fn pir<M: LanguageModel + ?Sized>(model: &M, ex: &RenderedExample) -> Result<PirScores> {
    let with = seq_log_probs(model, &ex.with_persona, &ex.response)?;
    let without = seq_log_probs(model, &ex.without_persona, &ex.response)?;
    PirScores::from_log_probs(&with, &without, ex.with_persona.len(), ex.without_persona.len())
}

/// `mask[i] = values[i] > threshold` (strict).
pub fn classify_personal(scores: &PirScores, threshold: f64) -> Vec<bool> {
    scores.values.iter().map(|&v| v > threshold).collect()
}
