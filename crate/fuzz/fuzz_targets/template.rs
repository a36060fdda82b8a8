#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::prompts::{Template, MEME_TEXT, NOTE};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = Template::parse(text, &[MEME_TEXT, NOTE]) {
        // Values containing placeholders must come out verbatim.
        let out = t.render(&[(MEME_TEXT, "{NOTE}"), (NOTE, "{MEME_TEXT}")]);
        assert!(out.contains("{NOTE}") && out.contains("{MEME_TEXT}"));
    }
});
