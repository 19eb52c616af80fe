use serde::{Deserialize, Serialize};

use super::vocab::{segment, TokenSeq, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One JSONL line: a persona, a query, the reference response and, when
/// known, which response words carry persona information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub user_id: String,
    pub persona: Vec<String>,
    pub query: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personal_mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Record {
    /// Checks that the mask holds only 0/1 and has one entry per response word.
    pub fn validate(&self) -> Result<()> {
        if let Some(mask) = &self.personal_mask {
            if let Some(bad) = mask.iter().find(|&&m| m > 1) {
                return Err(Error::contract(format!("personal_mask entry {bad} is not 0/1")));
            }
            let n = segment(&self.response).len();
            if mask.len() != n {
                return Err(Error::contract(format!(
                    "personal_mask has {} entries but the response has {n} tokens",
                    mask.len()
                )));
            }
        }
        Ok(())
    }

    /// All words this record contributes to a vocabulary.
    pub fn words(&self) -> impl Iterator<Item = String> + '_ {
        self.persona
            .iter()
            .flat_map(|s| segment(s))
            .chain(segment(&self.query))
            .chain(segment(&self.response))
    }

    pub fn to_example(&self, vocab: &Vocab) -> PersonalizedExample {
        PersonalizedExample {
            user_id: self.user_id.clone(),
            persona: self.persona.iter().map(|s| vocab.encode(s)).collect(),
            query: vocab.encode(&self.query),
            response: vocab.encode(&self.response),
            gold_personal_mask: self
                .personal_mask
                .as_ref()
                .map(|m| m.iter().map(|&b| b == 1).collect()),
        }
    }
}

/// A tokenized (persona, query, response) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonalizedExample {
    pub user_id: String,
    /// One token sequence per persona sentence; may be empty.
    pub persona: Vec<TokenSeq>,
    pub query: TokenSeq,
    pub response: TokenSeq,
    pub gold_personal_mask: Option<Vec<bool>>,
}

impl PersonalizedExample {
    pub fn without_persona(&self) -> Self {
        Self {
            persona: Vec::new(),
            ..self.clone()
        }
    }
}

/// An ordered, immutable collection of records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records tagged with `split`; untagged records count as training data.
    pub fn split(&self, split: Split) -> Dataset {
        Dataset::new(
            self.records
                .iter()
                .filter(|r| r.split.unwrap_or(Split::Train) == split)
                .cloned()
                .collect(),
        )
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.records.iter().any(|r| r.split == Some(split))
    }

    pub fn words(&self) -> impl Iterator<Item = String> + '_ {
        self.records.iter().flat_map(Record::words)
    }

    pub fn examples(&self, vocab: &Vocab) -> Vec<PersonalizedExample> {
        self.records.iter().map(|r| r.to_example(vocab)).collect()
    }
}
