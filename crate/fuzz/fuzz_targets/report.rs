#![no_main]

use libfuzzer_sys::fuzz_target;
use mind_core::eval::parse_report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = parse_report(text) {
        let render = |r: &[mind_core::pipeline::SampleTranscript]| {
            r.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect::<String>()
        };
        let once = render(&report);
        let again = parse_report(&once).expect("rendered report parses");
        assert_eq!(render(&again), once);
    }
});
