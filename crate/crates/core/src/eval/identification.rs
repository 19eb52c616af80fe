use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::histogram::HistogramBin;
use crate::data::{PersonalizedExample, Vocab};
use crate::error::{Error, Result};

/// Precision, recall and F1 of a personal-token classifier.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted_tokens: usize,
    pub true_positive_tokens: usize,
    pub gold_words: usize,
    pub recalled_gold_words: usize,
    /// Score histogram of the classified tokens (empty for the baseline).
    pub histogram: Vec<HistogramBin>,
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Word index of every token. With word-level tokenization this is
/// `0..n`; subword tokenizers map several tokens to one word.
pub fn identity_alignment(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Scores predicted personal tokens against gold masks.
///
/// A predicted token is a true positive when it lies inside a gold personal
/// word. A gold word is recalled when at least one of its tokens is flagged.
/// With no predictions precision is 0.
pub fn identification_metrics(
    method: &str,
    predicted: &[Vec<bool>],
    gold: &[Vec<bool>],
    words: &[Vec<usize>],
) -> Result<IdentificationReport> {
    if predicted.len() != gold.len() || words.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} predictions, {} gold masks, {} alignments",
            predicted.len(),
            gold.len(),
            words.len()
        )));
    }
    let mut r = IdentificationReport {
        method: method.to_string(),
        ..IdentificationReport::default()
    };
    for (i, ((p, g), w)) in predicted.iter().zip(gold).zip(words).enumerate() {
        if p.len() != g.len() || w.len() != g.len() {
            return Err(Error::contract(format!(
                "example {i}: {} predictions, {} gold flags, {} alignments",
                p.len(),
                g.len(),
                w.len()
            )));
        }
        // A word is personal when its tokens are gold.
        let gold_words: BTreeSet<usize> = w.iter().zip(g).filter(|(_, &g)| g).map(|(&w, _)| w).collect();
        let mut recalled = BTreeSet::new();
        for ((&flag, &word), _) in p.iter().zip(w).zip(g) {
            if flag {
                r.predicted_tokens += 1;
                if gold_words.contains(&word) {
                    r.true_positive_tokens += 1;
                    recalled.insert(word);
                }
            }
        }
        r.gold_words += gold_words.len();
        r.recalled_gold_words += recalled.len();
    }
    r.precision = if r.predicted_tokens == 0 {
        0.0
    } else {
        r.true_positive_tokens as f64 / r.predicted_tokens as f64
    };
    r.recall = if r.gold_words == 0 {
        0.0
    } else {
        r.recalled_gold_words as f64 / r.gold_words as f64
    };
    r.f1 = f1_score(r.precision, r.recall);
    Ok(r)
}

/// Function words and punctuation-free English stoplist.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can", "do", "does", "for",
    "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "me", "my",
    "no", "not", "of", "on", "or", "our", "she", "so", "than", "that", "the", "their", "them", "then", "there",
    "they", "this", "to", "too", "us", "very", "was", "we", "were", "what", "when", "where", "which", "who", "why",
    "will", "with", "you", "your",
];

/// Words excluded from lexical matching.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stoplist(BTreeSet<String>);

impl Stoplist {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self(words.into_iter().map(Into::into).collect())
    }

    /// Stopwords and tokens without any alphanumeric character are not
    /// content words.
    pub fn is_content(&self, word: &str) -> bool {
        word.chars().any(char::is_alphanumeric) && !self.0.contains(word)
    }
}

impl Default for Stoplist {
    fn default() -> Self {
        Self::new(DEFAULT_STOPWORDS.iter().copied())
    }
}

/// Flags response tokens whose word also occurs in the persona and is a
/// content word.
pub fn word_match_baseline(ex: &PersonalizedExample, vocab: &Vocab, stoplist: &Stoplist) -> Vec<bool> {
    let persona: BTreeSet<u32> = ex.persona.iter().flatten().copied().collect();
    ex.response
        .iter()
        .map(|t| persona.contains(t) && vocab.token(*t).is_some_and(|w| stoplist.is_content(w)))
        .collect()
}
