#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::caption::client::parse_completion;
use zsecap::caption::postprocess;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(once) = postprocess(text) {
        assert_eq!(postprocess(&once).unwrap(), once);
    }
    let _ = parse_completion(text);
});
