#![no_main]

use libfuzzer_sys::fuzz_target;
use seqforge::agents::ScriptedMock;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        let _ = ScriptedMock::parse(text);
    }
});
