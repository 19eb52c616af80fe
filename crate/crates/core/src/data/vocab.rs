use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

/// Reserved tokens, in id order.
pub const SPECIALS: [&str; 5] = [PAD, BOS, EOS, SEP, UNK];

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const UNK_ID: TokenId = 4;

/// Word-level vocabulary with dense ids; the reserved tokens occupy `0..5`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from an arbitrary word stream. Words are sorted so
    /// the id assignment does not depend on input order.
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !SPECIALS.contains(&w.as_str()))
            .collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(set)
            .collect();
        Self::from_tokens(tokens).expect("specials are unique and present")
    }

    /// Restores a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Checkpoint(format!(
                    "vocab id {i} must be the reserved token {s}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocab entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> TokenSeq {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        self.encode_words(&segment(text))
    }

    pub fn decode_words(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    /// Space-joined surface form; equals `normalize(text)` for in-vocab text.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        self.decode_words(ids).join(" ")
    }
}

/// Lowercased word-level segmentation: runs of alphanumerics (and `'`) form
/// words, every other non-space character is its own token, and the reserved
/// `<...>` tokens are kept whole.
pub fn segment(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            if let Some(s) = SPECIALS.iter().find(|s| rest.starts_with(**s)) {
                out.push(s.to_string());
                rest = &rest[s.len()..];
                continue;
            }
            let c = rest.chars().next().unwrap();
            if is_word_char(c) {
                let end = rest
                    .char_indices()
                    .find(|&(_, c)| !is_word_char(c))
                    .map_or(rest.len(), |(i, _)| i);
                out.push(rest[..end].to_lowercase());
                rest = &rest[end..];
            } else {
                out.push(c.to_string());
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// The canonical surface form produced by `decode(encode(text))`.
pub fn normalize(text: &str) -> String {
    segment(text).join(" ")
}

/// Segments `text` and maps each word to its id (unknown words become `<unk>`).
pub fn tokenize(vocab: &Vocab, text: &str) -> TokenSeq {
    vocab.encode(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocab {
        Vocab::build(["color", "is", "red", "."])
    }

    #[test]
    fn specials_take_first_ids() {
        let v = toy();
        assert_eq!(v.id(PAD), PAD_ID);
        assert_eq!(v.id(BOS), BOS_ID);
        assert_eq!(v.id(UNK), UNK_ID);
        assert_eq!(v.len(), 9);
    }

    #[test]
    fn tokenize_examples() {
        let v = toy();
        let ids = tokenize(&v, "color is red .");
        assert_eq!(ids.len(), 4);
        assert!(!ids.contains(&UNK_ID));
        assert!(tokenize(&v, "").is_empty());
        assert_eq!(tokenize(&v, "zebra"), vec![UNK_ID]);
    }

    #[test]
    fn segmentation_splits_punctuation_and_lowercases() {
        assert_eq!(segment("Color is RED."), ["color", "is", "red", "."]);
        assert_eq!(segment("<bos>hi,there"), ["<bos>", "hi", ",", "there"]);
        assert_eq!(segment("  a\t b\n"), ["a", "b"]);
    }

    #[test]
    fn decode_is_normalizing_inverse() {
        let v = toy();
        let text = "Color   is red.";
        assert_eq!(v.decode(&v.encode(text)), normalize(text));
        assert_eq!(normalize(text), "color is red .");
    }

    #[test]
    fn from_tokens_validates() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.push("x".into());
        t.push("x".into());
        assert!(Vocab::from_tokens(t).is_err());
    }
}
