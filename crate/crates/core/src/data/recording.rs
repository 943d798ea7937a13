//! Subject recordings on disk: a TOML manifest plus one headerless data file
//! per subject.
//!
//! Manifest layout:
//!
//! ```toml
//! [[subject]]
//! subject_id = "hc-000"
//! label = 0                 # 0 = HC, 1 = MDD
//! sampling_rate_hz = 250
//! channels = 4
//! samples = 10000
//! data_file = "hc-000.f32"  # relative to the manifest's directory
//! ```
//!
//! Data files hold `channels × samples` little-endian IEEE-754 `f32` values,
//! channel-major (all of channel 0, then all of channel 1, ...), no header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// File name `synth-data` writes and directory lookups resolve to.
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub label: usize,
    pub sampling_rate_hz: u32,
    /// `channels × samples`.
    pub signal: Tensor,
}

impl SubjectRecording {
    pub fn new(subject_id: impl Into<String>, label: usize, sampling_rate_hz: u32, signal: Tensor) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            label,
            sampling_rate_hz,
            signal,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn channels(&self) -> usize {
        self.signal.rows()
    }

    pub fn samples(&self) -> usize {
        self.signal.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::parse("subject_id", "empty"));
        }
        if self.label > 1 {
            return Err(Error::parse("label", format!("{} is not 0 or 1", self.label)));
        }
        if self.sampling_rate_hz == 0 {
            return Err(Error::parse("sampling_rate_hz", "must be positive"));
        }
        if self.channels() == 0 || self.samples() == 0 {
            return Err(Error::parse("channels", "signal is empty"));
        }
        if !self.signal.is_finite() {
            return Err(Error::parse("signal", "contains NaN or infinite values"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub label: usize,
    pub sampling_rate_hz: u32,
    pub channels: usize,
    pub samples: usize,
    pub data_file: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, rename = "subject")]
    pub subjects: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses and validates manifest text. Does not touch the data files.
    pub fn parse(text: &str) -> Result<Self> {
        let manifest: Manifest =
            toml::from_str(text).map_err(|e| Error::parse("manifest", e.message().to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for (i, e) in manifest.subjects.iter().enumerate() {
            let at = |field: &str| format!("subject[{i}].{field}");
            if e.subject_id.is_empty() {
                return Err(Error::parse(at("subject_id"), "empty"));
            }
            if !seen.insert(e.subject_id.as_str()) {
                return Err(Error::parse(at("subject_id"), format!("duplicate `{}`", e.subject_id)));
            }
            if e.label > 1 {
                return Err(Error::parse(at("label"), format!("{} is not 0 or 1", e.label)));
            }
            if e.sampling_rate_hz == 0 {
                return Err(Error::parse(at("sampling_rate_hz"), "must be positive"));
            }
            if e.channels == 0 {
                return Err(Error::parse(at("channels"), "must be positive"));
            }
            if e.samples == 0 {
                return Err(Error::parse(at("samples"), "must be positive"));
            }
            if e.channels.checked_mul(e.samples).and_then(|n| n.checked_mul(4)).is_none() {
                return Err(Error::parse(at("samples"), "payload size overflows"));
            }
            if e.data_file.is_empty() {
                return Err(Error::parse(at("data_file"), "empty"));
            }
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Accepts a manifest file, a directory holding [`MANIFEST_FILE`], or a path
/// that names the manifest without its `.toml` extension.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        return path.join(MANIFEST_FILE);
    }
    if !path.exists() {
        let with_ext = path.with_extension("toml");
        if with_ext.is_file() {
            return with_ext;
        }
    }
    path.to_path_buf()
}

/// Decodes a headerless channel-major `f32` payload.
pub fn decode_signal(bytes: &[u8], channels: usize, samples: usize) -> Result<Tensor> {
    let expected = channels
        .checked_mul(samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse("samples", "payload size overflows"))?;
    if bytes.len() != expected {
        let field = if samples > 0 && channels > 0 && bytes.len().is_multiple_of(samples * 4) {
            "channels"
        } else {
            "samples"
        };
        return Err(Error::parse(
            field,
            format!(
                "data holds {} bytes, {channels} channels x {samples} samples need {expected}",
                bytes.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(channels * samples);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(Error::parse(
                "signal",
                format!("non-finite value at channel {} sample {}", i / samples, i % samples),
            ));
        }
        values.push(f64::from(v));
    }
    Tensor::from_vec(channels, samples, values)
}

pub fn encode_signal(signal: &Tensor) -> Vec<u8> {
    signal
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

/// Reads the recording an entry points at. `base` is the manifest's directory.
pub fn load_subject(entry: &ManifestEntry, base: &Path) -> Result<SubjectRecording> {
    let path = base.join(&entry.data_file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let signal = decode_signal(&bytes, entry.channels, entry.samples).map_err(|e| match e {
        Error::Parse { field, message } => Error::Parse {
            field: format!("{}.{field}", entry.subject_id),
            message,
        },
        other => other,
    })?;
    SubjectRecording::new(entry.subject_id.clone(), entry.label, entry.sampling_rate_hz, signal)
}

/// Writes the data file and returns the matching manifest entry.
pub fn write_subject(rec: &SubjectRecording, dir: &Path) -> Result<ManifestEntry> {
    let data_file = format!("{}.f32", rec.subject_id);
    let path = dir.join(&data_file);
    fs::write(&path, encode_signal(&rec.signal)).map_err(|e| Error::io(&path, e))?;
    Ok(ManifestEntry {
        subject_id: rec.subject_id.clone(),
        label: rec.label,
        sampling_rate_hz: rec.sampling_rate_hz,
        channels: rec.channels(),
        samples: rec.samples(),
        data_file,
    })
}

/// Loads every subject of a manifest, sorted by subject id.
pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecording>> {
    let path = resolve_manifest_path(path);
    let manifest = Manifest::read(&path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut recs = manifest
        .subjects
        .iter()
        .map(|e| load_subject(e, base))
        .collect::<Result<Vec<_>>>()?;
    recs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(recs)
}

/// Writes every recording plus the manifest into `dir`; returns the manifest
/// path.
pub fn write_dataset(recs: &[SubjectRecording], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let subjects = recs
        .iter()
        .map(|r| write_subject(r, dir))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, Manifest { subjects }.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
