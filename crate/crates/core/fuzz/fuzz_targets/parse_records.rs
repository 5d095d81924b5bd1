#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::corpus::{parse_bytes, parse_records, Source};

fuzz_target!(|bytes: &[u8]| {
    for source in [Source::OeisLike, Source::EulerLike, Source::ExamLike, Source::Fixture] {
        let parsed = parse_bytes(bytes, source);
        for record in &parsed.records {
            assert!(!record.terms.is_empty());
        }
        let _ = parse_records(bytes, source);
    }
});
