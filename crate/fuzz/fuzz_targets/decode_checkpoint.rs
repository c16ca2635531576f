#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_rkm::io::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&c);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);
    }
});
