#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_core::data::Vocab;
use perce_core::scoring::PromptTemplate;

fuzz_target!(|input: &str| {
    let Ok(template) = serde_json::from_str::<PromptTemplate>(input) else { return };
    let vocab = Vocab::build(template.words());
    let _ = template.compile(&vocab);
});
