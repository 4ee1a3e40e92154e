#![no_main]

use counterflow_core::wire::Endpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(e) = Endpoint::parse(src) {
        let shown = format!("{e:?}");
        assert!(shown.starts_with("tcp:") || shown.starts_with("exec:"));
    }
});
