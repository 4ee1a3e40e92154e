#![no_main]

use counterflow_core::SceneRegistry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(reg) = SceneRegistry::from_toml(src) {
        let again = SceneRegistry::from_toml(&reg.to_toml()).expect("serialized scene parses");
        assert_eq!(again.to_toml(), reg.to_toml());
    }
});
