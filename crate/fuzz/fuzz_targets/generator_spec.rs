#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_core::data::{generate, GeneratorSpec};

fuzz_target!(|input: &str| {
    let Ok(spec) = serde_json::from_str::<GeneratorSpec>(input) else { return };
    // Keep generation cheap; validation runs regardless of size.
    if spec.n_users.saturating_mul(spec.queries_per_user) > 256 {
        let _ = spec.validate();
        return;
    }
    if let Ok(corpus) = generate(&spec) {
        for r in &corpus.dataset.records {
            r.validate().expect("generated records are valid");
        }
    }
});
