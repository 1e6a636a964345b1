#![no_main]

use libfuzzer_sys::fuzz_target;
use pelpa_core::RunManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = RunManifest::from_toml(text) {
            RunManifest::from_toml(&m.to_toml().unwrap()).unwrap();
        }
    }
});
