#![no_main]

use holosim_core::EventTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(trace) = EventTrace::from_jsonl(text) {
        let out = trace.to_jsonl();
        assert_eq!(EventTrace::from_jsonl(&out).unwrap().to_jsonl(), out);
    }
});
