#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::rlgen::{ResponseRecord, RewardConfig};

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(record) = ResponseRecord::parse(text) {
            if let Ok(b) = record.score(&RewardConfig::default()) {
                assert!(b.total >= -1.0);
            }
        }
    }
});
