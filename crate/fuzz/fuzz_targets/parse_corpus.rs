#![no_main]

use cmsst_core::corpus::Corpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(corpus) = Corpus::parse_jsonl(text) {
            // Whatever parses must serialize and parse back to the same ids.
            let again = Corpus::parse_jsonl(&corpus.to_jsonl()).expect("round trip");
            assert_eq!(corpus.ids(), again.ids());
        }
    }
});
