use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::losses::{check_bounds, DEFAULT_CLIP_MAX, DEFAULT_CLIP_MIN};
use crate::model::Checkpoint;
use crate::scoring::{PromptTemplate, RemoteConfig, RemoteScorer, ScorerBackend};

/// Token-weighting scheme for the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Plain cross-entropy (unit weights).
    CE,
    /// Clipped persona-influence weights, re-estimated online.
    PerCE,
    /// Clipped normalized per-token loss.
    LossCE,
    /// Clipped normalized predictive entropy.
    EntCE,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::CE, Method::PerCE, Method::LossCE, Method::EntCE];

    pub fn name(self) -> &'static str {
        match self {
            Method::CE => "CE",
            Method::PerCE => "PerCE",
            Method::LossCE => "LossCE",
            Method::EntCE => "EntCE",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which model produces the persona-influence scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerRef {
    /// The model being trained, at its pre-update parameters.
    #[default]
    #[serde(rename = "self")]
    SelfModel,
    /// A frozen local checkpoint.
    Checkpoint(PathBuf),
    /// A remote endpoint speaking the scoring protocol.
    Remote(String),
}

impl ScorerRef {
    /// Loads the external backend, if any. The backend must share `vocab`.
    pub fn resolve(&self, vocab: &Vocab, template: &PromptTemplate) -> Result<Option<ScorerBackend>> {
        match self {
            ScorerRef::SelfModel => Ok(None),
            ScorerRef::Checkpoint(path) => {
                let ck = Checkpoint::load(path)?;
                if ck.vocab != *vocab {
                    return Err(Error::Config(format!(
                        "scorer checkpoint {} uses a different vocabulary",
                        path.display()
                    )));
                }
                Ok(Some(ScorerBackend::Local(ck)))
            }
            ScorerRef::Remote(endpoint) => Ok(Some(ScorerBackend::Remote {
                scorer: RemoteScorer::new(RemoteConfig::new(endpoint.clone()))?,
                vocab: vocab.clone(),
                template: template.clone(),
            })),
        }
    }
}

/// How often token weights are re-estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EStepFrequency {
    /// Before every update, from the current parameters.
    #[default]
    Step,
    /// Once per epoch for the whole training set.
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    pub seed: u64,
    pub scorer: ScorerRef,
    pub e_step: EStepFrequency,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Rescale each example's weights to mean 1 after clipping.
    pub renormalize_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PerCE,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.95),
            adam_eps: 1e-8,
            weight_decay: 0.0,
            warmup_ratio: 0.04,
            epochs: 3,
            batch_size: 2,
            clip_min: DEFAULT_CLIP_MIN,
            clip_max: DEFAULT_CLIP_MAX,
            seed: 0,
            scorer: ScorerRef::SelfModel,
            e_step: EStepFrequency::Step,
            grad_clip: None,
            renormalize_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("adam_betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        check_bounds(self.clip_min, self.clip_max)
    }
}

/// Learning rate for `step`: a linear ramp from 0 over
/// `ceil(warmup_ratio * total_steps)` steps, then constant.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = (cfg.warmup_ratio * total_steps as f64).ceil() as usize;
    if step >= warmup {
        cfg.learning_rate
    } else {
        cfg.learning_rate * step as f64 / warmup as f64
    }
}
