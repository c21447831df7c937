#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::caption::{build_request, Decoding, PromptTemplate};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(template) = PromptTemplate::new("fuzz", text, 1) {
        if let Ok(request) = build_request("q", "https://x/y.jpg", "Article body.", &template, Decoding::default(), 64) {
            assert!(request.user_text().starts_with(text));
        }
    }
});
