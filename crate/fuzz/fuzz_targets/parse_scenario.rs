#![no_main]

use holosim_core::scenario::{parse_scenario, render};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = parse_scenario(text) {
        // anything accepted must survive a render/parse cycle
        let again = parse_scenario(&render(&s)).expect("rendered scenario fails to parse");
        assert_eq!(again, s);
    }
});
