#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::embedding::{decode_embeddings, decode_header_bytes, encode_embeddings};

fuzz_target!(|data: &[u8]| {
    let _ = decode_header_bytes(data);
    if let Ok(m) = decode_embeddings(data) {
        // Anything that decodes must re-encode to the same bytes.
        assert_eq!(encode_embeddings(&m).unwrap(), data);
    }
});
