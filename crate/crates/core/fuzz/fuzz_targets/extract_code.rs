#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::extract::{extract_code, last_integer};

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        let _ = extract_code(text);
        let _ = last_integer(text);
    }
});
