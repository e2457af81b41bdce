#![no_main]

use libfuzzer_sys::fuzz_target;
use trajcql::dataset::{encode_transition_cache, parse_transition_cache};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(transitions) = parse_transition_cache(text) {
            let again = parse_transition_cache(&encode_transition_cache(&transitions)).expect("round trip");
            assert_eq!(again.len(), transitions.len());
        }
    }
});
