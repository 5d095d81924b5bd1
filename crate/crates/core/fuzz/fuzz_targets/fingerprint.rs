#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::agents::Fingerprint;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(fp) = text.parse::<Fingerprint>() {
            assert_eq!(fp.to_string().parse::<Fingerprint>().ok(), Some(fp));
        }
    }
});
