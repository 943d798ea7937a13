#![no_main]

use libfuzzer_sys::fuzz_target;
use quanvnext::data::Manifest;

fuzz_target!(|text: &str| {
    if let Ok(m) = Manifest::parse(text) {
        // anything accepted must survive a round trip
        let again = Manifest::parse(&m.to_toml()).unwrap();
        assert_eq!(m, again);
    }
});
