#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::rlgen::extract_cases;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        let cases = extract_cases(text);
        assert!(cases.len() <= text.lines().count());
    }
});
