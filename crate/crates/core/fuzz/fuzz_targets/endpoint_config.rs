#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::caption::LlmEndpointConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = LlmEndpointConfig::from_json(text) {
            let _ = config.completions_url();
        }
    }
});
