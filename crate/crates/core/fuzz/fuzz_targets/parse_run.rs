#![no_main]

use libfuzzer_sys::fuzz_target;
use zsecap::ranked::{parse_run, write_run};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(run) = parse_run(text) {
        let again = parse_run(&write_run(&run).unwrap()).unwrap();
        assert_eq!(again, run);
    }
});
