#![no_main]

use libfuzzer_sys::fuzz_target;
use pelpa_core::campaign::read_episodes_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = read_episodes_csv(text);
    }
});
