#![no_main]

use libfuzzer_sys::fuzz_target;
use quanvnext::eval::Stage;
use quanvnext::model::Preset;

fuzz_target!(|text: &str| {
    if let Ok(stage) = text.parse::<Stage>() {
        assert_eq!(stage.to_string(), text);
    }
    if let Ok(p) = text.parse::<Preset>() {
        assert_eq!(p.to_string(), text);
    }
});
