#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::sandbox::parse_error_report;

fuzz_target!(|bytes: &[u8]| {
    let stderr = String::from_utf8_lossy(bytes);
    let _ = parse_error_report(&stderr);
});
