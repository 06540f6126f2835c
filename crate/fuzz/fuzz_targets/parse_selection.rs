#![no_main]

use cmsst_core::corpus::parse_selection;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for id in parse_selection(text) {
            assert!(!id.is_empty());
        }
    }
});
