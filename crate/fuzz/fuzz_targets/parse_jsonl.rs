#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_core::data::{parse_jsonl, to_jsonl_string};

fuzz_target!(|input: &str| {
    // Anything that parses must survive a serialize/parse round trip.
    if let Ok(ds) = parse_jsonl(input) {
        let again = parse_jsonl(&to_jsonl_string(&ds)).expect("re-parse of serialized corpus");
        assert_eq!(again, ds);
    }
});
