#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::FusionConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = FusionConfig::from_json(text);
    }
});
