#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_core::model::Checkpoint;

fuzz_target!(|input: &str| {
    if let Ok(ck) = Checkpoint::from_json_str(input) {
        let again = Checkpoint::from_json_str(&ck.to_json_string()).expect("re-load of saved checkpoint");
        assert_eq!(again, ck);
    }
});
