#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::debate::parse_judgment;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((_, thought)) = parse_judgment(text) {
        assert!(!thought.is_empty());
    }
});
