#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_text(text, None) {
        let again = RunConfig::from_text(&config.render(), None).expect("rendered config parses");
        assert_eq!(again, config);
    }
});
