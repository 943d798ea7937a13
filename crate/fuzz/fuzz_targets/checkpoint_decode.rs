#![no_main]

use libfuzzer_sys::fuzz_target;
use quanvnext::checkpoint::{Checkpoint, Container};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        assert_eq!(Container::decode(&c.encode()).unwrap(), c);
    }
    if let Ok(ck) = Checkpoint::decode(data) {
        let _ = ck.model.config().stage_shapes();
    }
});
