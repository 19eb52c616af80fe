#![no_main]

use libfuzzer_sys::fuzz_target;
use perce_core::scoring::wire::parse_score_response;

fuzz_target!(|data: &[u8]| {
    let Some((&n, body)) = data.split_first() else { return };
    if let Ok(lp) = parse_score_response(body, n as usize) {
        assert_eq!(lp.len(), n as usize);
        assert!(lp.iter().all(|v| v.is_finite() && *v <= 0.0));
    }
});
