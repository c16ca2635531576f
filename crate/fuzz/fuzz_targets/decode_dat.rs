#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_rkm::io::{decode_dat, encode_dat};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_dat(data) {
        if m.iter().all(|v| v.is_finite()) {
            assert_eq!(decode_dat(&encode_dat(&m).unwrap()).unwrap(), m);
        }
    }
});
