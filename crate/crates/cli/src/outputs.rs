//! Output directories: a run manifest with artifact hashes on success, and
//! removal of everything the command created on failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run.json";

pub struct Outputs {
    dir: PathBuf,
}

fn entries(dir: &Path) -> Result<BTreeSet<PathBuf>> {
    let mut out = BTreeSet::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        out.insert(e?.path());
    }
    Ok(out)
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Outputs {
    /// Runs `f` with `dir` created. On error, files and directories that did
    /// not exist before are removed (files `f` overwrote are not restored).
    pub fn run<T>(dir: &Path, f: impl FnOnce(&mut Outputs) -> Result<T>) -> Result<T> {
        let existed = dir.exists();
        let before = if existed { entries(dir)? } else { BTreeSet::new() };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut out = Outputs { dir: dir.to_path_buf() };
        let result = f(&mut out);
        if result.is_err() {
            if existed {
                for p in entries(dir).unwrap_or_default().difference(&before) {
                    let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
                }
            } else {
                let _ = fs::remove_dir_all(dir);
            }
        }
        result
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Writes `run.json`: `config` plus the SHA-256 of every other file in the
    /// directory.
    pub fn finish(&self, config: serde_json::Value) -> Result<()> {
        let names: Vec<String> = entries(&self.dir)?
            .iter()
            .filter(|p| p.is_file())
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .filter(|n| n != RUN_MANIFEST)
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.finish_named(RUN_MANIFEST, config, &refs)
    }

    /// Like [`Self::finish`] with an explicit manifest name and artifact list.
    pub fn finish_named(&self, manifest: &str, config: serde_json::Value, artifacts: &[&str]) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for name in artifacts {
            hashes.insert(name.to_string(), sha256_hex(&self.path(name))?);
        }
        let mut doc = serde_json::Map::new();
        doc.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        doc.insert("config".into(), config);
        doc.insert("artifacts".into(), serde_json::to_value(hashes)?);
        self.write_json(manifest, &serde_json::Value::Object(doc))
    }
}
