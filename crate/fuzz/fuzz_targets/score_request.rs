#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use perce_core::data::Vocab;
use perce_core::model::{Checkpoint, ModelConfig, ModelParams};
use perce_core::scoring::wire::{score_request, ScoreRequest};
use perce_core::scoring::PromptTemplate;

fn checkpoint() -> &'static Checkpoint {
    static CK: OnceLock<Checkpoint> = OnceLock::new();
    CK.get_or_init(|| {
        let vocab = Vocab::build(["you", "prefer", "red", "blue", "persona", ":", "question", "answer"]);
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            max_seq_len: 32,
            ..ModelConfig::desk(vocab.len())
        };
        Checkpoint {
            params: ModelParams::init(&cfg).expect("tiny model"),
            vocab,
            template: PromptTemplate::default(),
        }
    })
}

fuzz_target!(|input: &str| {
    let Ok(req) = serde_json::from_str::<ScoreRequest>(input) else { return };
    if let Ok(resp) = score_request(checkpoint(), &req) {
        assert_eq!(resp.tokens.len(), resp.logprobs.len());
        assert!(resp.logprobs.iter().all(|v| v.is_finite() && *v <= 0.0));
    }
});
