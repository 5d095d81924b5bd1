#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::corpus::parse_density_verdict;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        let _ = parse_density_verdict(text);
    }
});
