#![no_main]

use counterflow_core::metrics::{delta_flam, parse_score_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let Ok(file) = parse_score_file(src) else { return };
    let ids = file.matrix.prompt_ids().to_vec();
    for p in &ids {
        for q in &ids {
            if let Ok(r) = delta_flam(&file.matrix, &file.clip_id, p, q) {
                assert!((-1.0..=1.0).contains(&r.delta));
            }
        }
    }
});
