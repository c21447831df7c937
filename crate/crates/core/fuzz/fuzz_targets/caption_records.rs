#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::caption_eval::{cider_d, parse_caption_records};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // First line is the references file, the rest are caption lines.
    let (refs, captions) = text.split_once('\n').unwrap_or(("", text));
    for references in [None, Some(refs)] {
        if let Ok(records) = parse_caption_records(captions, references) {
            if let Ok(scores) = cider_d(&records, 4, 6.0) {
                assert!(scores.per_query.values().all(|s| (0.0..=10.0).contains(s)));
            }
        }
    }
});
