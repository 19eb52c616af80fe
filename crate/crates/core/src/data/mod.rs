//! Tokenization, JSONL corpora and the synthetic persona corpus generator.

mod example;
pub mod generator;
pub mod jsonl;
mod vocab;

pub use example::{Dataset, PersonalizedExample, Record, Split};
pub use generator::{generate, AttributeTemplate, GeneratedCorpus, GeneratorSpec, QaTemplate};
pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, to_jsonl_string};
pub use vocab::*;
