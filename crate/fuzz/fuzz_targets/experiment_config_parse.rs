#![no_main]

use std::path::Path;

use counterflow_core::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    // Scene paths that do not resolve are ordinary errors.
    if let Ok(cfg) = ExperimentConfig::from_toml(src, Path::new("/nonexistent")) {
        cfg.validate().expect("parsed configs are valid");
    }
});
