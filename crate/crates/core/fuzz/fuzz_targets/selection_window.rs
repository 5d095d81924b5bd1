#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::rlgen::{parse_rational, SelectionWindow};

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        let _ = parse_rational(text);
        if let Ok(window) = serde_json::from_str::<SelectionWindow>(text) {
            let _ = window.validate();
        }
    }
});
