#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::evalkit::{dataset_stats, StatsSample};

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        let _ = StatsSample::parse(text);
    }
    let _ = dataset_stats(bytes);
});
