#![no_main]

use cmsst_core::pipeline::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_json_str(text) {
            let _ = PipelineConfig::from_json_str(&cfg.to_json_string()).expect("round trip");
        }
    }
});
