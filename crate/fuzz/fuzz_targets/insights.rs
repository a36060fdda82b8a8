#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::insight::parse_insights;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let cap = 1 + data.first().copied().unwrap_or(0) as usize % 8;
    if let Ok(items) = parse_insights(text, cap) {
        assert!(!items.is_empty() && items.len() <= cap);
        assert!(items.iter().all(|i| !i.trim().is_empty()));
    }
});
