#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::retrieval::{parse_embeddings, render_embeddings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse_embeddings(text) {
        for rec in set.records() {
            assert_eq!(rec.image_vec.len(), set.dim);
            assert_eq!(rec.text_vec.len(), set.dim);
        }
        let rendered = render_embeddings(&set);
        let again = parse_embeddings(&rendered).expect("rendered embeddings parse");
        assert_eq!(render_embeddings(&again), rendered);
    }
});
