//! Checkpoint container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "QNXCKPT1"
//! count        u32      number of records
//! record × count:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   kind       u8       0 = f64 array, 1 = UTF-8 text
//!   len        u64      payload bytes
//!   payload    len bytes (kind 0: IEEE-754 f64 values)
//! ```
//!
//! Records are written sorted by name, so equal checkpoints encode to equal
//! bytes. A model checkpoint holds `meta` (JSON text: epoch, model config,
//! pipeline settings, held-out subject ids), `params`, `phi`, and optionally
//! `norm.mean` / `norm.std`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PipelineConfig, ZScoreStats};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, QuanvNeXt};

pub const MAGIC: &[u8; 8] = b"QNXCKPT1";
pub const FORMAT_VERSION: u32 = 1;

const KIND_FLOATS: u8 = 0;
const KIND_TEXT: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Floats(Vec<f64>),
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub records: BTreeMap<String, Record>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::parse(field, format!("truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, record) in &self.records {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (kind, payload) = match record {
                Record::Floats(v) => (KIND_FLOATS, v.iter().flat_map(|x| x.to_le_bytes()).collect()),
                Record::Text(t) => (KIND_TEXT, t.as_bytes().to_vec()),
            };
            out.push(kind);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::parse("magic", "not a checkpoint file"));
        }
        let count = r.u32("count")?;
        let mut records = BTreeMap::new();
        for i in 0..count {
            let at = |f: &str| format!("record[{i}].{f}");
            let name_len = r.u16(&at("name_len"))? as usize;
            let name = std::str::from_utf8(r.take(name_len, &at("name"))?)
                .map_err(|_| Error::parse(at("name"), "not UTF-8"))?
                .to_string();
            let kind = r.u8(&at("kind"))?;
            let len = r.u64(&at("len"))?;
            if len > r.remaining() as u64 {
                return Err(Error::parse(at("len"), format!("{len} bytes exceed the file")));
            }
            let payload = r.take(len as usize, &at("payload"))?;
            let record = match kind {
                KIND_FLOATS => {
                    if payload.len() % 8 != 0 {
                        return Err(Error::parse(at("len"), "f64 payload is not a multiple of 8 bytes"));
                    }
                    Record::Floats(
                        payload
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect(),
                    )
                }
                KIND_TEXT => Record::Text(
                    std::str::from_utf8(payload)
                        .map_err(|_| Error::parse(at("payload"), "text is not UTF-8"))?
                        .to_string(),
                ),
                other => return Err(Error::parse(at("kind"), format!("unknown record kind {other}"))),
            };
            if records.insert(name.clone(), record).is_some() {
                return Err(Error::parse(at("name"), format!("duplicate record `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::parse("count", format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { records })
    }

    fn floats(&self, name: &str) -> Result<Option<&[f64]>> {
        match self.records.get(name) {
            None => Ok(None),
            Some(Record::Floats(v)) => Ok(Some(v)),
            Some(Record::Text(_)) => Err(Error::parse(name, "expected an f64 array")),
        }
    }

    fn require_floats(&self, name: &str) -> Result<&[f64]> {
        self.floats(name)?.ok_or_else(|| Error::parse(name, "missing record"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub epoch: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default)]
    pub validation_subjects: Vec<String>,
    #[serde(default)]
    pub test_subjects: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: QuanvNeXt,
    pub norm: Option<ZScoreStats>,
}

impl Checkpoint {
    pub fn new(model: QuanvNeXt, epoch: usize) -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                epoch,
                model: model.config().clone(),
                pipeline: None,
                validation_subjects: Vec::new(),
                test_subjects: Vec::new(),
            },
            model,
            norm: None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut c = Container::default();
        let meta = serde_json::to_string(&self.meta).expect("checkpoint meta serializes");
        c.records.insert("meta".into(), Record::Text(meta));
        c.records.insert("params".into(), Record::Floats(self.model.params()));
        c.records.insert("phi".into(), Record::Floats(self.model.phi()));
        if let Some(n) = &self.norm {
            c.records.insert("norm.mean".into(), Record::Floats(n.mean.clone()));
            c.records.insert("norm.std".into(), Record::Floats(n.std.clone()));
        }
        c.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes)?;
        let meta = match c.records.get("meta") {
            Some(Record::Text(t)) => serde_json::from_str::<CheckpointMeta>(t)
                .map_err(|e| Error::parse("meta", e.to_string()))?,
            Some(Record::Floats(_)) => return Err(Error::parse("meta", "expected text")),
            None => return Err(Error::parse("meta", "missing record")),
        };
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                "meta.format_version",
                format!("unsupported version {}", meta.format_version),
            ));
        }
        meta.model
            .validate()
            .map_err(|e| Error::parse("meta.model", e.to_string()))?;
        let params = c.require_floats("params")?;
        let phi = c.require_floats("phi")?;
        if params.iter().chain(phi).any(|v| !v.is_finite()) {
            return Err(Error::parse("params", "non-finite value"));
        }
        let model = QuanvNeXt::from_flat(meta.model.clone(), params, phi)
            .map_err(|e| Error::parse("params", e.to_string()))?;
        let norm = match (c.floats("norm.mean")?, c.floats("norm.std")?) {
            (None, None) => None,
            (Some(m), Some(s)) => {
                if m.len() != meta.model.in_channels || s.len() != m.len() {
                    return Err(Error::parse("norm.mean", "channel count does not match the model"));
                }
                if m.iter().chain(s).any(|v| !v.is_finite()) || s.iter().any(|&v| v <= 0.0) {
                    return Err(Error::parse("norm.std", "statistics must be finite with positive std"));
                }
                Some(ZScoreStats {
                    mean: m.to_vec(),
                    std: s.to_vec(),
                })
            }
            _ => return Err(Error::parse("norm.std", "mean and std must both be present")),
        };
        Ok(Self { meta, model, norm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
