#![no_main]

use libfuzzer_sys::fuzz_target;
use pelpa_core::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_toml(text) {
            // anything accepted must survive a round trip
            let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(format!("{cfg:?}"), format!("{again:?}"));
        }
    }
});
