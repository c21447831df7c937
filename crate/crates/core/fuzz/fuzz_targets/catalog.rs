#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::catalog::ArticleCatalog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Articles and mapping are separated by a blank line.
    let (articles, mapping) = text.split_once("\n\n").unwrap_or((text, ""));
    let _ = ArticleCatalog::from_jsonl(articles, mapping);
});
