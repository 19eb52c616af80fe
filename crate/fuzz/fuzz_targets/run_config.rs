#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_cli::config::RunConfig;

fuzz_target!(|input: &str| {
    if let Ok(cfg) = RunConfig::from_json(input) {
        let _ = cfg.model_config(64);
    }
});
