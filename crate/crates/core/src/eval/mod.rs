//! Personal-token identification, score distributions and text overlap metrics.

mod histogram;
mod identification;
mod text;

pub use histogram::{default_edges, histogram_csv, is_weakly_increasing, pir_histogram, HistogramBin};
pub use identification::{
    f1_score, identification_metrics, identity_alignment, word_match_baseline, IdentificationReport, Stoplist,
    DEFAULT_STOPWORDS,
};
pub use text::{lcs_len, meteor_lite, rouge_l, stem};

use serde::{Deserialize, Serialize};

use crate::data::{PersonalizedExample, TokenId, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::model::{join, LanguageModel};
use crate::scoring::{classify_personal, PirScores, RenderedExample, ScorerBackend, DEFAULT_PERSONAL_THRESHOLD};
use crate::trainer::{evaluate_slots, SlotEval};

/// One line of the per-token score dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    pub user_id: String,
    pub tokens: Vec<String>,
    pub pir: Vec<f64>,
    pub personal: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<bool>>,
    pub context_with_len: usize,
    pub context_without_len: usize,
}

impl TokenScoreRecord {
    pub fn new(ex: &RenderedExample, vocab: &Vocab, scores: &PirScores, threshold: f64) -> Self {
        Self {
            user_id: ex.user_id.clone(),
            tokens: vocab.decode_words(&ex.response).into_iter().map(String::from).collect(),
            pir: scores.values.clone(),
            personal: classify_personal(scores, threshold),
            gold: ex.gold_personal_mask.clone(),
            context_with_len: scores.context_with_len,
            context_without_len: scores.context_without_len,
        }
    }
}

/// Scores every example with `backend`, in input order.
pub fn score_examples(backend: &ScorerBackend, examples: &[RenderedExample]) -> Result<Vec<PirScores>> {
    backend.pir_batch(examples).into_iter().collect()
}

/// Greedy continuation of exactly `n` tokens.
pub fn greedy_continuation<M: LanguageModel + ?Sized>(model: &M, context: &[TokenId], n: usize) -> Result<TokenSeq> {
    let mut seq = join(context, &[], model.max_seq_len())?;
    for _ in 0..n {
        if seq.len() >= model.max_seq_len() {
            break;
        }
        let lp = model.log_probs(&seq)?;
        let row = lp.row(seq.len() - 1);
        let next = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        seq.push(next as TokenId);
    }
    Ok(seq[context.len()..].to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    pub edges: Vec<f64>,
    /// Also decode greedily and report ROUGE-L / METEOR.
    pub generation: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_PERSONAL_THRESHOLD,
            edges: default_edges(),
            generation: true,
        }
    }
}

/// Everything reported by a corpus evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEvaluation {
    pub examples: usize,
    pub threshold: f64,
    pub contrast: IdentificationReport,
    pub word_match: IdentificationReport,
    pub mean_pir_personal: f64,
    pub mean_pir_other: f64,
    pub histogram: Vec<HistogramBin>,
    pub mean_context_with_len: f64,
    pub mean_context_without_len: f64,
    pub slots: SlotEval,
    pub rouge_l: Option<f64>,
    pub meteor: Option<f64>,
}

impl CorpusEvaluation {
    /// `metric,value` rows; every value is a deterministic function of the
    /// checkpoint and data.
    pub fn metrics_csv(&self) -> String {
        let mut rows = vec![
            ("examples".to_string(), self.examples as f64),
            ("threshold".into(), self.threshold),
            ("contrast_precision".into(), self.contrast.precision),
            ("contrast_recall".into(), self.contrast.recall),
            ("contrast_f1".into(), self.contrast.f1),
            ("word_match_precision".into(), self.word_match.precision),
            ("word_match_recall".into(), self.word_match.recall),
            ("word_match_f1".into(), self.word_match.f1),
            ("mean_pir_personal".into(), self.mean_pir_personal),
            ("mean_pir_other".into(), self.mean_pir_other),
            ("mean_context_with_len".into(), self.mean_context_with_len),
            ("mean_context_without_len".into(), self.mean_context_without_len),
            ("heldout_loss".into(), self.slots.loss),
            ("slot_accuracy".into(), self.slots.slot_accuracy),
            ("token_accuracy".into(), self.slots.token_accuracy),
        ];
        if let (Some(r), Some(m)) = (self.rouge_l, self.meteor) {
            rows.push(("rouge_l".into(), r));
            rows.push(("meteor_lite".into(), m));
        }
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores, classifies and compares against gold masks and the lexical
/// baseline. Examples without gold masks are rejected.
pub fn evaluate_corpus<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    examples: &[PersonalizedExample],
    rendered: &[RenderedExample],
    scores: &[PirScores],
    opts: &EvalOptions,
) -> Result<CorpusEvaluation> {
    if examples.len() != rendered.len() || scores.len() != rendered.len() {
        return Err(Error::contract("examples, renderings and scores must align"));
    }
    let mut gold = Vec::with_capacity(examples.len());
    for ex in rendered {
        gold.push(
            ex.gold_personal_mask
                .clone()
                .ok_or_else(|| Error::contract(format!("example {} has no personal_mask", ex.user_id)))?,
        );
    }
    let words: Vec<Vec<usize>> = gold.iter().map(|g| identity_alignment(g.len())).collect();
    let predicted: Vec<Vec<bool>> = scores.iter().map(|s| classify_personal(s, opts.threshold)).collect();
    let stop = Stoplist::default();
    let baseline: Vec<Vec<bool>> = examples.iter().map(|ex| word_match_baseline(ex, vocab, &stop)).collect();

    let all_scores: Vec<f64> = scores.iter().flat_map(|s| s.values.iter().copied()).collect();
    let all_gold: Vec<bool> = gold.iter().flatten().copied().collect();
    let histogram = pir_histogram(&all_scores, &all_gold, &opts.edges)?;
    let mut contrast = identification_metrics("contrast", &predicted, &gold, &words)?;
    contrast.histogram = histogram.clone();
    let word_match = identification_metrics("word_match", &baseline, &gold, &words)?;
    let (personal, other): (Vec<_>, Vec<_>) =
        all_scores.iter().copied().zip(all_gold.iter().copied()).partition(|(_, g)| *g);

    let (rouge, meteor) = if opts.generation {
        let (mut r, mut m) = (Vec::new(), Vec::new());
        for ex in rendered {
            let out = greedy_continuation(model, &ex.with_persona, ex.response.len())?;
            r.push(rouge_l(&out, &ex.response));
            m.push(meteor_lite(&vocab.decode_words(&out), &vocab.decode_words(&ex.response)));
        }
        (Some(mean(&r)), Some(mean(&m)))
    } else {
        (None, None)
    };
    Ok(CorpusEvaluation {
        examples: examples.len(),
        threshold: opts.threshold,
        contrast,
        word_match,
        mean_pir_personal: mean(&personal.iter().map(|p| p.0).collect::<Vec<_>>()),
        mean_pir_other: mean(&other.iter().map(|p| p.0).collect::<Vec<_>>()),
        histogram,
        mean_context_with_len: mean(&scores.iter().map(|s| s.context_with_len as f64).collect::<Vec<_>>()),
        mean_context_without_len: mean(&scores.iter().map(|s| s.context_without_len as f64).collect::<Vec<_>>()),
        slots: evaluate_slots(model, rendered)?,
        rouge_l: rouge,
        meteor,
    })
}
