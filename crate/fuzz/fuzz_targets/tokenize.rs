#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_core::data::{segment, tokenize, Vocab};

fuzz_target!(|input: &str| {
    let words = segment(input);
    let vocab = Vocab::build(words.iter().cloned());
    let ids = tokenize(&vocab, input);
    assert_eq!(ids.len(), words.len());
    // Every segmented word is in the vocabulary, so decoding is lossless.
    assert_eq!(vocab.decode_words(&ids), words);
});
