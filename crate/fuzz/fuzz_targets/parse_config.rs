#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_rkm::trainer::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = TrainConfig::parse(text) {
            let text = cfg.to_config_string();
            assert_eq!(TrainConfig::parse(&text).unwrap().to_config_string(), text);
        }
    }
});
