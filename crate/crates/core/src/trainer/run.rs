use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_at, EStepFrequency, Method, TrainConfig};
use super::optim::{clip_grad_norm, AdamW};
use crate::data::{Dataset, Split, Vocab};
use crate::error::{Error, Result};
use crate::losses::{clip_weights, entropy, mean_normalized, response_forward, weighted_loss, WeightVector};
use crate::model::{seq_log_probs, Checkpoint, LanguageModel, ModelConfig, ModelParams};
use crate::numcore::Tape;
use crate::scoring::{PirScores, PromptTemplate, RenderedExample, ScorerBackend};

/// Per-update record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub epoch: usize,
    /// Mean of per-example objectives over the batch.
    pub loss: f64,
    /// Mean unweighted cross-entropy over the batch.
    pub ce_loss: f64,
    pub lr: f64,
    /// Weight-estimation wall-clock (ms).
    pub e_ms: f64,
    /// Forward, backward and update wall-clock (ms).
    pub m_ms: f64,
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    /// Weight sums and counts over gold-personal and other tokens.
    pub personal_weight_sum: f64,
    pub personal_count: usize,
    pub filler_weight_sum: f64,
    pub filler_count: usize,
}

/// Held-out teacher-forced metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotEval {
    /// Mean per-example cross-entropy.
    pub loss: f64,
    /// Share of gold-personal tokens whose argmax prediction is the reference.
    pub slot_accuracy: f64,
    pub slot_tokens: usize,
    /// Share of all response tokens predicted correctly.
    pub token_accuracy: f64,
    pub examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    /// Wall-clock of epoch-level weight estimation (ms); zero in per-step mode.
    pub e_ms: f64,
    pub personal_weight_mean: f64,
    pub filler_weight_mean: f64,
    pub eval: Option<SlotEval>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub total_steps: usize,
    pub steps: Vec<StepStats>,
    pub epochs: Vec<EpochStats>,
    pub e_ms_total: f64,
    pub m_ms_total: f64,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn mean_e_ms(&self) -> f64 {
        self.e_ms_total / self.steps.len().max(1) as f64
    }

    pub fn mean_m_ms(&self) -> f64 {
        self.m_ms_total / self.steps.len().max(1) as f64
    }

    pub fn loss_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: Checkpoint,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Owns parameters and optimizer state; one call to [`Trainer::train_step`]
/// is one E-step followed by one M-step.
pub struct Trainer {
    cfg: TrainConfig,
    params: ModelParams,
    opt: AdamW,
    step: usize,
    total_steps: usize,
    scorer: Option<ScorerBackend>,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: TrainConfig, total_steps: usize, scorer: Option<ScorerBackend>) -> Result<Self> {
        cfg.validate()?;
        if !params.is_finite() {
            return Err(Error::NonFinite("initial parameters".into()));
        }
        let opt = AdamW::new(
            params.tensors().iter().map(|t| t.tensor.numel()),
            cfg.adam_betas,
            cfg.adam_eps,
            cfg.weight_decay,
        );
        Ok(Self {
            cfg,
            params,
            opt,
            step: 0,
            total_steps,
            scorer,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Persona-influence scores from the external scorer, or from the current
    /// parameters reusing the persona-conditioned values already computed.
    fn pir_scores(&self, ex: &RenderedExample, with: Option<&[f64]>) -> Result<PirScores> {
        if let Some(backend) = &self.scorer {
            return backend.pir(ex);
        }
        let with = match with {
            Some(w) => w.to_vec(),
            None => seq_log_probs(&self.params, &ex.with_persona, &ex.response)?,
        };
        let without = seq_log_probs(&self.params, &ex.without_persona, &ex.response)?;
        PirScores::from_log_probs(&with, &without, ex.with_persona.len(), ex.without_persona.len())
    }

    fn finish_weights(&self, raw: &[f64]) -> Result<WeightVector> {
        clip_weights(raw, self.cfg.clip_min, self.cfg.clip_max)
    }

    /// Weights for one example under the current parameters, without any
    /// gradient flow. `with` and `rows` come from the persona-conditioned pass.
    fn estimate(&self, ex: &RenderedExample, with: Option<(&[f64], &[Vec<f64>])>) -> Result<WeightVector> {
        match self.cfg.method {
            Method::CE => Ok(WeightVector::unit(ex.response.len())),
            Method::PerCE => self.finish_weights(&self.pir_scores(ex, with.map(|w| w.0))?.values),
            Method::LossCE => {
                let values = match with {
                    Some((v, _)) => v.to_vec(),
                    None => seq_log_probs(&self.params, &ex.with_persona, &ex.response)?,
                };
                let nll: Vec<f64> = values.iter().map(|v| -v).collect();
                self.finish_weights(&mean_normalized(&nll))
            }
            Method::EntCE => {
                let h: Vec<f64> = match with {
                    Some((_, rows)) => rows.iter().map(|r| entropy(r)).collect(),
                    None => crate::losses::token_entropy(&self.params, ex)?,
                };
                self.finish_weights(&mean_normalized(&h))
            }
        }
    }

    /// Weights for every example under the current parameters.
    pub fn estimate_all(&self, examples: &[RenderedExample]) -> Result<Vec<WeightVector>> {
        match (self.cfg.method, &self.scorer) {
            (Method::PerCE, Some(backend)) => backend
                .pir_batch(examples)
                .into_iter()
                .map(|s| self.finish_weights(&s?.values))
                .collect(),
            _ => examples.iter().map(|ex| self.estimate(ex, None)).collect(),
        }
    }

    /// One E-step and one AdamW update on the mean batch objective.
    /// `precomputed` supplies weights instead of estimating them.
    pub fn train_step(&mut self, batch: &[RenderedExample], precomputed: Option<&[WeightVector]>) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if let Some(p) = precomputed {
            if p.len() != batch.len() {
                return Err(Error::contract(format!("{} weight vectors for {} examples", p.len(), batch.len())));
            }
        }
        let lr = lr_at(self.step + 1, self.total_steps, &self.cfg);
        let inv_b = 1.0 / batch.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.params.tensors().iter().map(|t| vec![0.0; t.tensor.numel()]).collect();
        let mut stats = StepStats {
            step: self.step,
            epoch: 0,
            loss: 0.0,
            ce_loss: 0.0,
            lr,
            e_ms: 0.0,
            m_ms: 0.0,
            weight_mean: 0.0,
            weight_min: f64::INFINITY,
            weight_max: f64::NEG_INFINITY,
            personal_weight_sum: 0.0,
            personal_count: 0,
            filler_weight_sum: 0.0,
            filler_count: 0,
        };
        let mut weight_total = 0.0;
        let mut weight_count = 0usize;

        for (i, ex) in batch.iter().enumerate() {
            let t_m = Instant::now();
            let mut tape = Tape::new();
            let rf = response_forward(&mut tape, &self.params, ex, true)?;
            stats.m_ms += ms_since(t_m);

            let t_e = Instant::now();
            let w = match precomputed {
                Some(p) => p[i].clone(),
                None => {
                    let rows: Vec<Vec<f64>> = if self.cfg.method == Method::EntCE {
                        let lp = tape.value(rf.forward.log_probs);
                        rf.rows.iter().map(|&r| lp.row(r).to_vec()).collect()
                    } else {
                        Vec::new()
                    };
                    self.estimate(ex, Some((&rf.values, &rows)))?
                }
            };
            if w.len() != ex.response.len() {
                return Err(Error::contract(format!(
                    "{} weights for a response of {} tokens",
                    w.len(),
                    ex.response.len()
                )));
            }
            stats.e_ms += ms_since(t_e);

            let t_m = Instant::now();
            for (k, &v) in w.values().iter().enumerate() {
                weight_total += v;
                weight_count += 1;
                stats.weight_min = stats.weight_min.min(v);
                stats.weight_max = stats.weight_max.max(v);
                match ex.gold_personal_mask.as_ref().map(|m| m[k]) {
                    Some(true) => {
                        stats.personal_weight_sum += v;
                        stats.personal_count += 1;
                    }
                    Some(false) => {
                        stats.filler_weight_sum += v;
                        stats.filler_count += 1;
                    }
                    None => {}
                }
            }
            let applied: Vec<f64> = if self.cfg.renormalize_weights {
                mean_normalized(w.values())
            } else {
                w.values().to_vec()
            };
            let loss = weighted_loss(&mut tape, &rf, &applied).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("step {} example {}: {msg}", self.step, ex.user_id)),
                e => e,
            })?;
            stats.loss += tape.value(loss).data()[0] * inv_b;
            stats.ce_loss -= rf.values.iter().sum::<f64>() / rf.values.len() as f64 * inv_b;
            tape.backward(loss)?;
            for (acc, v) in grads.iter_mut().zip(&rf.forward.params) {
                let g = tape.grad(*v).ok_or_else(|| Error::contract("parameter leaf without gradient"))?;
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += gi * inv_b;
                }
            }
            stats.m_ms += ms_since(t_m);
        }

        let t_m = Instant::now();
        if let Some(max_norm) = self.cfg.grad_clip {
            clip_grad_norm(&mut grads, max_norm);
        }
        let mut slices: Vec<&mut [f64]> = self
            .params
            .tensors_mut()
            .iter_mut()
            .map(|t| t.tensor.data_mut())
            .collect();
        self.opt.step(&mut slices, &grads, lr)?;
        if !self.params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after step {}", self.step)));
        }
        stats.m_ms += ms_since(t_m);
        stats.weight_mean = weight_total / weight_count.max(1) as f64;
        self.step += 1;
        Ok(stats)
    }
}

/// Teacher-forced held-out loss and argmax accuracy.
pub fn evaluate_slots<M: LanguageModel + ?Sized>(model: &M, examples: &[RenderedExample]) -> Result<SlotEval> {
    let mut out = SlotEval {
        examples: examples.len(),
        ..SlotEval::default()
    };
    let (mut slot_hits, mut hits, mut tokens) = (0usize, 0usize, 0usize);
    for ex in examples {
        let mut tape = Tape::new();
        let rf = response_forward(&mut tape, model, ex, false)?;
        out.loss -= rf.values.iter().sum::<f64>() / rf.values.len() as f64;
        let lp = tape.value(rf.forward.log_probs);
        for (k, (&row, &target)) in rf.rows.iter().zip(&ex.response).enumerate() {
            let r = lp.row(row);
            let argmax = (0..r.len()).fold(0, |best, j| if r[j] > r[best] { j } else { best });
            let hit = argmax == target as usize;
            tokens += 1;
            hits += hit as usize;
            if ex.gold_personal_mask.as_ref().is_some_and(|m| m[k]) {
                out.slot_tokens += 1;
                slot_hits += hit as usize;
            }
        }
    }
    let n = examples.len().max(1) as f64;
    out.loss /= n;
    out.token_accuracy = hits as f64 / tokens.max(1) as f64;
    out.slot_accuracy = slot_hits as f64 / out.slot_tokens.max(1) as f64;
    Ok(out)
}

/// Vocabulary covering every corpus word and the template.
pub fn build_vocab(corpus: &Dataset, template: &PromptTemplate) -> Vocab {
    Vocab::build(corpus.words().chain(template.words()))
}

/// Renders every record of `corpus` with `template`.
pub fn render(corpus: &Dataset, vocab: &Vocab, template: &PromptTemplate) -> Result<Vec<RenderedExample>> {
    let compiled = template.compile(vocab)?;
    Ok(corpus
        .examples(vocab)
        .iter()
        .map(|ex| RenderedExample::new(ex, &compiled))
        .collect())
}

/// Where [`train`] writes epoch checkpoints and which scorer it uses.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub checkpoint_dir: Option<&'a Path>,
    pub scorer: Option<ScorerBackend>,
    pub init: Option<ModelParams>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-epoch{epoch}.json")
}

/// Runs `epochs * ceil(N / batch_size)` updates over the training split,
/// evaluating on the test split (if any) and checkpointing after each epoch.
pub fn train(
    corpus: &Dataset,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    template: &PromptTemplate,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = build_vocab(corpus, template);
    if model_cfg.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} but the corpus needs {}",
            model_cfg.vocab_size,
            vocab.len()
        )));
    }
    let train_set = render(&corpus.split(Split::Train), &vocab, template)?;
    let test_set = render(&corpus.split(Split::Test), &vocab, template)?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(ex) = train_set.iter().chain(&test_set).find(|e| e.full_len() > model_cfg.max_seq_len) {
        return Err(Error::Length {
            len: ex.full_len(),
            max: model_cfg.max_seq_len,
        });
    }
    let params = match opts.init {
        Some(p) if p.config() == model_cfg => p,
        Some(_) => return Err(Error::Config("initial parameters do not match the model config".into())),
        None => ModelParams::init(model_cfg)?,
    };
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut trainer = Trainer::new(params, cfg.clone(), total_steps, opts.scorer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        method: cfg.method,
        total_steps,
        steps: Vec::with_capacity(total_steps),
        epochs: Vec::with_capacity(cfg.epochs),
        e_ms_total: 0.0,
        m_ms_total: 0.0,
        final_checkpoint: None,
    };
    let mut checkpoint = Checkpoint {
        params: trainer.params().clone(),
        vocab: vocab.clone(),
        template: template.clone(),
    };
    if let Some(dir) = opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (epoch_weights, epoch_e_ms) = if cfg.e_step == EStepFrequency::Epoch && cfg.method != Method::CE {
            let t = Instant::now();
            let w = trainer.estimate_all(&train_set)?;
            (Some(w), ms_since(t))
        } else {
            (None, 0.0)
        };
        report.e_ms_total += epoch_e_ms;
        let (mut loss_sum, mut personal, mut filler) = (0.0, (0.0, 0usize), (0.0, 0usize));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<RenderedExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let weights: Option<Vec<WeightVector>> = epoch_weights
                .as_ref()
                .map(|w| chunk.iter().map(|&i| w[i].clone()).collect());
            let mut stats = trainer.train_step(&batch, weights.as_deref())?;
            stats.epoch = epoch;
            loss_sum += stats.loss;
            personal.0 += stats.personal_weight_sum;
            personal.1 += stats.personal_count;
            filler.0 += stats.filler_weight_sum;
            filler.1 += stats.filler_count;
            report.e_ms_total += stats.e_ms;
            report.m_ms_total += stats.m_ms;
            report.steps.push(stats);
        }
        let eval = if test_set.is_empty() {
            None
        } else {
            Some(evaluate_slots(trainer.params(), &test_set)?)
        };
        checkpoint.params = trainer.params().clone();
        let path = match opts.checkpoint_dir {
            Some(dir) => {
                let p = dir.join(checkpoint_name(epoch));
                checkpoint.save(&p)?;
                Some(p)
            }
            None => None,
        };
        let stats = EpochStats {
            epoch,
            steps: steps_per_epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            e_ms: epoch_e_ms,
            personal_weight_mean: personal.0 / personal.1.max(1) as f64,
            filler_weight_mean: filler.0 / filler.1.max(1) as f64,
            eval,
            checkpoint: path.clone(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, held-out slot accuracy {}",
            stats.train_loss,
            stats.eval.as_ref().map_or("n/a".into(), |e| format!("{:.3}", e.slot_accuracy))
        );
        report.epochs.push(stats);
        report.final_checkpoint = path;
    }
    Ok(TrainOutcome { report, checkpoint })
}
