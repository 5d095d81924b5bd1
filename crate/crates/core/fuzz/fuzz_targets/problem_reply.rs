#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::problemgen::parse_problem_reply;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok((statement, cases)) = parse_problem_reply(text) {
            assert!(!statement.trim().is_empty());
            assert_eq!(cases.len(), 2);
        }
    }
});
