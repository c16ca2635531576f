#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_rkm::io::{parse_idx_images, parse_idx_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok((m, _)) = parse_idx_images(data, None) {
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let _ = parse_idx_images(data, Some(2));
    let _ = parse_idx_labels(data, None);
});
