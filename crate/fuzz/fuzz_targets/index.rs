#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::retrieval::{parse_index, render_index};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(index) = parse_index(text) {
        let rendered = render_index(&index);
        let again = parse_index(&rendered).expect("rendered index parses");
        assert_eq!(again, index);
    }
});
