#![no_main]

use cmsst_core::cmsn::{Checkpoint, CmsnModel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ck) = Checkpoint::from_json_str(text) {
            let _ = CmsnModel::from_checkpoint(&ck);
        }
    }
});
