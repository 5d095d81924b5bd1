#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use seqforge::pipeline::PipelineConfig;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(config) = PipelineConfig::from_json(text, Path::new("/nonexistent")) {
            let _ = config.validate();
            let _ = config.digest();
        }
    }
});
