#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::GroundTruth;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = GroundTruth::from_jsonl(text);
    }
});
