#![no_main]

use libfuzzer_sys::fuzz_target;
use quanvnext::data::{decode_signal, encode_signal};

// First two bytes pick the claimed geometry, the rest is the payload.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let (channels, samples) = (data[0] as usize, data[1] as usize);
    if let Ok(t) = decode_signal(&data[2..], channels, samples) {
        assert_eq!(t.shape(), (channels, samples));
        assert_eq!(encode_signal(&t), &data[2..]);
    }
});
