#![no_main]

use libfuzzer_sys::fuzz_target;
use pelpa_core::agent::QTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = QTable::from_csv(text) {
            assert_eq!(QTable::from_csv(&t.to_csv()).unwrap(), t);
        }
    }
});
