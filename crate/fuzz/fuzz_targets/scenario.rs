#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::backend::{ChatMessage, MockBackend};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mock) = MockBackend::from_scenario(text) {
        let _ = mock.respond(&[ChatMessage::user(text)]);
    }
});
