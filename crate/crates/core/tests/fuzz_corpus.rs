//! Replays the checked-in fuzz seeds through the same checks as the fuzz
//! targets, so the corpus stays meaningful without a nightly toolchain.

use std::fs;
use std::path::PathBuf;

use quanvnext::checkpoint::{Checkpoint, Container};
use quanvnext::data::{decode_signal, encode_signal, Manifest};
use quanvnext::eval::Stage;
use quanvnext::model::Preset;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn manifest_seeds() {
    let mut parsed = 0;
    for (_, bytes) in seeds("manifest_parse") {
        let text = String::from_utf8(bytes).unwrap();
        if let Ok(m) = Manifest::parse(&text) {
            assert_eq!(Manifest::parse(&m.to_toml()).unwrap(), m);
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn signal_seeds() {
    let mut decoded = 0;
    for (_, data) in seeds("signal_decode") {
        let (channels, samples) = (data[0] as usize, data[1] as usize);
        if let Ok(t) = decode_signal(&data[2..], channels, samples) {
            assert_eq!(encode_signal(&t), &data[2..]);
            decoded += 1;
        }
    }
    assert!(decoded >= 2);
}

#[test]
fn checkpoint_seeds() {
    let mut models = 0;
    for (name, data) in seeds("checkpoint_decode") {
        let c = Container::decode(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(Container::decode(&c.encode()).unwrap(), c);
        if let Ok(ck) = Checkpoint::decode(&data) {
            ck.model.config().stage_shapes().unwrap();
            assert_eq!(ck.encode(), data);
            models += 1;
        }
    }
    assert_eq!(models, 1);
}

#[test]
fn name_seeds() {
    for (name, bytes) in seeds("name_parse") {
        let text = String::from_utf8(bytes).unwrap();
        let stage = text.parse::<Stage>().ok().map(|s| s.to_string());
        let preset = text.parse::<Preset>().ok().map(|p| p.to_string());
        assert!(stage.as_ref() == Some(&text) || preset.as_ref() == Some(&text), "{name}");
    }
}
