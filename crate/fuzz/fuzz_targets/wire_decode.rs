#![no_main]

use counterflow_core::wire::{decode, decode_prefix, encode, read_frame};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = decode(data) {
        // Anything that decodes re-encodes to the same bytes.
        let bytes = encode(&msg).expect("decoded frame re-encodes");
        assert_eq!(bytes, data);
    }
    if let Ok((msg, used)) = decode_prefix(data) {
        assert!(used <= data.len());
        assert_eq!(encode(&msg).ok().as_deref(), Some(&data[..used]));
    }
    let mut cursor = data;
    while let Ok(Some(_)) = read_frame(&mut cursor) {}
});
