#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_rkm::io::{normalize_columns, parse_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(mut t) = parse_csv(data) {
        assert!(t.values.iter().all(|v| v.is_finite()));
        let _ = normalize_columns(&mut t.values);
    }
});
