//! Token-level objectives and weight estimators.
//!
//! All objectives average over response tokens only, conditioned on the full
//! persona context. Weights always enter the loss as constants.

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{join, target_rows, Forward, LanguageModel};
use crate::numcore::{Tape, Tensor, Var};
use crate::scoring::{PirScores, RenderedExample};

pub const DEFAULT_CLIP_MIN: f64 = 0.8;
pub const DEFAULT_CLIP_MAX: f64 = 5.0;

/// Per-token loss weights clipped into `[clip_min, clip_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    clip_min: f64,
    clip_max: f64,
}

pub fn check_bounds(clip_min: f64, clip_max: f64) -> Result<()> {
    if !(clip_min.is_finite() && clip_max.is_finite() && clip_min > 0.0 && clip_max >= clip_min) {
        return Err(Error::Config(format!(
            "clip bounds must satisfy 0 < min <= max, got [{clip_min}, {clip_max}]"
        )));
    }
    Ok(())
}

impl WeightVector {
    pub fn new(values: Vec<f64>, clip_min: f64, clip_max: f64) -> Result<Self> {
        check_bounds(clip_min, clip_max)?;
        if let Some(v) = values.iter().find(|v| !(clip_min..=clip_max).contains(*v)) {
            return Err(Error::contract(format!("weight {v} outside [{clip_min}, {clip_max}]")));
        }
        Ok(Self {
            values,
            clip_min,
            clip_max,
        })
    }

    /// All-ones weights; turns WCE into plain CE.
    pub fn unit(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            clip_min: 1.0,
            clip_max: 1.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.clip_min, self.clip_max)
    }
}

/// `clip(raw[i], m, M)` for every entry.
pub fn clip_weights(raw: &[f64], clip_min: f64, clip_max: f64) -> Result<WeightVector> {
    check_bounds(clip_min, clip_max)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raw weight signal {raw:?}")));
    }
    WeightVector::new(
        raw.iter().map(|v| v.clamp(clip_min, clip_max)).collect(),
        clip_min,
        clip_max,
    )
}

/// Weights from clipped PIR scores.
pub fn perce_weights(scores: &PirScores, clip_min: f64, clip_max: f64) -> Result<WeightVector> {
    clip_weights(&scores.values, clip_min, clip_max)
}

/// `signal[i] / mean(signal)`; a non-positive mean yields all ones.
pub fn mean_normalized(signal: &[f64]) -> Vec<f64> {
    let mean = signal.iter().sum::<f64>() / signal.len().max(1) as f64;
    if mean > f64::MIN_POSITIVE {
        signal.iter().map(|v| v / mean).collect()
    } else {
        vec![1.0; signal.len()]
    }
}

/// Shannon entropy of a distribution given by log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .map(|&lp| lp.exp() * lp)
        .sum::<f64>()
}

/// A teacher-forced pass over `context ++ response` recorded on a tape.
pub struct ResponseForward {
    pub forward: Forward,
    /// `[n]` log-probabilities of the reference response tokens.
    pub token_log_probs: Var,
    /// Values of `token_log_probs`.
    pub values: Vec<f64>,
    /// Forward rows that predict each response token.
    pub rows: Vec<usize>,
}

/// Runs the model on the persona-conditioned context followed by the response.
pub fn response_forward<M: LanguageModel + ?Sized>(
    tape: &mut Tape,
    model: &M,
    ex: &RenderedExample,
    track_grad: bool,
) -> Result<ResponseForward> {
    let n = ex.response.len();
    if n == 0 {
        return Err(Error::contract(format!("example {} has an empty response", ex.user_id)));
    }
    let tokens = join(&ex.with_persona, &ex.response, model.max_seq_len())?;
    let forward = model.forward_tape(tape, &tokens[..tokens.len() - 1], track_grad)?;
    let rows = target_rows(ex.with_persona.len(), n);
    let cols: Vec<usize> = ex.response.iter().map(|&t| t as usize).collect();
    let token_log_probs = tape.pick(forward.log_probs, &rows, &cols)?;
    let values = tape.value(token_log_probs).data().to_vec();
    Ok(ResponseForward {
        forward,
        token_log_probs,
        values,
        rows,
    })
}

/// `-(1/n) Σ w_i log p_i` with the weights recorded as constants.
pub fn weighted_loss(tape: &mut Tape, rf: &ResponseForward, weights: &[f64]) -> Result<Var> {
    let n = rf.values.len();
    if weights.len() != n {
        return Err(Error::contract(format!("{} weights for {n} response tokens", weights.len())));
    }
    let w = tape.constant(Tensor::vector(weights.to_vec()));
    let weighted = tape.mul(w, rf.token_log_probs)?;
    let total = tape.sum(weighted);
    let loss = tape.scale(total, -1.0 / n as f64);
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {value}; token log-probs {:?}; weights {weights:?}",
            rf.values
        )));
    }
    Ok(loss)
}

/// Mean negative log-likelihood of the response.
pub fn ce_loss<M: LanguageModel + ?Sized>(tape: &mut Tape, model: &M, ex: &RenderedExample) -> Result<Var> {
    let rf = response_forward(tape, model, ex, true)?;
    weighted_loss(tape, &rf, &vec![1.0; rf.values.len()])
}

/// Weighted mean negative log-likelihood; the divisor is the token count.
pub fn wce_loss<M: LanguageModel + ?Sized>(
    tape: &mut Tape,
    model: &M,
    ex: &RenderedExample,
    w: &WeightVector,
) -> Result<Var> {
    let rf = response_forward(tape, model, ex, true)?;
    weighted_loss(tape, &rf, w.values())
}

/// Per-token negative log-likelihood under the full context.
pub fn token_nll<M: LanguageModel + ?Sized>(model: &M, ex: &RenderedExample) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let rf = response_forward(&mut tape, model, ex, false)?;
    Ok(rf.values.iter().map(|v| -v).collect())
}

/// Predictive entropy at each response position under the full context.
pub fn token_entropy<M: LanguageModel + ?Sized>(model: &M, ex: &RenderedExample) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let rf = response_forward(&mut tape, model, ex, false)?;
    let lp = tape.value(rf.forward.log_probs);
    Ok(rf.rows.iter().map(|&r| entropy(lp.row(r))).collect())
}

/// Loss-magnitude baseline: `clip(nll_i / mean(nll), m, M)`.
pub fn lossce_weights<M: LanguageModel + ?Sized>(
    model: &M,
    ex: &RenderedExample,
    clip_min: f64,
    clip_max: f64,
) -> Result<WeightVector> {
    clip_weights(&mean_normalized(&token_nll(model, ex)?), clip_min, clip_max)
}

/// Entropy baseline: `clip(H_i / mean(H), m, M)`.
pub fn entce_weights<M: LanguageModel + ?Sized>(
    model: &M,
    ex: &RenderedExample,
    clip_min: f64,
    clip_max: f64,
) -> Result<WeightVector> {
    clip_weights(&mean_normalized(&token_entropy(model, ex)?), clip_min, clip_max)
}

/// One JSONL record of per-token training signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDiagnostics {
    pub user_id: String,
    pub tokens: Vec<String>,
    pub nll: Vec<f64>,
    pub pir: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TokenDiagnostics {
    pub fn new(ex: &RenderedExample, vocab: &Vocab, nll: Vec<f64>, pir: &PirScores, weights: &WeightVector) -> Self {
        Self {
            user_id: ex.user_id.clone(),
            tokens: vocab
                .decode_words(&ex.response)
                .into_iter()
                .map(String::from)
                .collect(),
            nll,
            pir: pir.values.clone(),
            weight: weights.values().to_vec(),
        }
    }
}
