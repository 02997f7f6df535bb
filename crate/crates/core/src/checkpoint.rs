//! Single-file model checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `DSNCKPT\0` |
//! | 4     | format version (`u32`) |
//! | 1     | scope: 0 = full model, 1 = CNN branches only |
//! | 8 + n | JSON metadata (`u64` length, then the text): model config and provenance |
//! | 4     | entry count (`u32`) |
//! | ...   | entries: `u16` name length, name, `u8` kind (0 weight, 1 buffer), `u8` decay flag, `u8` rank, `u64` per dim, `f64` values |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeepSleepNet, ModelConfig, CNN_PREFIX};
use crate::nn::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Full,
    CnnOnly,
}

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Last completed pass and step of the phase that produced the weights.
    pub pass: usize,
    pub step: usize,
    pub phase: String,
    /// Subjects whose epochs were used for training.
    pub training_subjects: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub scope: Scope,
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub params: ParamStore,
}

/// Serializes a store without copying it.
pub fn encode(
    scope: Scope,
    config: &ModelConfig,
    provenance: &Provenance,
    params: &ParamStore,
) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        config: config.clone(),
        provenance: provenance.clone(),
    })?;
    let values: usize = params.entries().iter().map(|e| e.value.len()).sum();
    let mut out = Vec::with_capacity(32 + meta.len() + values * 8 + params.len() * 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match scope {
        Scope::Full => 0,
        Scope::CnnOnly => 1,
    });
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in params.entries() {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name too long: {}", e.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(match e.kind {
            ParamKind::Weight => 0,
            ParamKind::Buffer => 1,
        });
        out.push(u8::from(e.decay));
        out.push(e.value.rank() as u8);
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} while reading {what}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = c.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let scope = match c.u8("scope")? {
            0 => Scope::Full,
            1 => Scope::CnnOnly,
            s => return Err(Error::Checkpoint(format!("unknown scope tag {s}"))),
        };
        let meta_len = c.u64("metadata length")? as usize;
        let meta: Meta = serde_json::from_slice(c.take(meta_len, "metadata")?)?;
        let count = c.u32("entry count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = c.u16("name length")? as usize;
            let name = std::str::from_utf8(c.take(n, "name")?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            if params.id(&name).is_some() {
                return Err(Error::Checkpoint(format!("parameter {name} appears twice")));
            }
            let kind = match c.u8("kind")? {
                0 => ParamKind::Weight,
                1 => ParamKind::Buffer,
                k => return Err(Error::Checkpoint(format!("{name}: unknown kind {k}"))),
            };
            let decay = c.u8("decay")? != 0;
            let rank = c.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| c.u64("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
                Error::Checkpoint(format!("{name}: shape {shape:?} overflows"))
            })?;
            let raw = c.take(len.saturating_mul(8), "values")?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let id = params.add(name, Tensor::new(shape, data)?, kind);
            params.set_decay(id, decay);
        }
        if c.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - c.pos
            )));
        }
        Ok(Checkpoint {
            scope,
            config: meta.config,
            provenance: meta.provenance,
            params,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the network. Every parameter of the architecture must be
    /// present exactly once with its exact shape.
    pub fn into_model(self) -> Result<DeepSleepNet> {
        if self.scope != Scope::Full {
            return Err(Error::Checkpoint(
                "checkpoint holds only the CNN branches; fine-tune it first".into(),
            ));
        }
        let mut model = DeepSleepNet::build(self.config, 0)?;
        check_same_names(&model.params, &self.params, "")?;
        for e in self.params.entries() {
            model.params.replace(&e.name, e.value.clone())?;
        }
        Ok(model)
    }

    /// The CNN entries, checked against the architecture in the config.
    pub fn into_cnn(self) -> Result<ParamStore> {
        let reference = DeepSleepNet::build(self.config, 0)?.params.subset(CNN_PREFIX);
        let cnn = self.params.subset(CNN_PREFIX);
        check_same_names(&reference, &cnn, CNN_PREFIX)?;
        for (a, b) in reference.entries().iter().zip(cnn.entries()) {
            if a.value.shape() != b.value.shape() {
                return Err(Error::shapes("checkpoint entry", a.value.shape(), b.value.shape()));
            }
        }
        Ok(cnn)
    }
}

fn check_same_names(expected: &ParamStore, got: &ParamStore, prefix: &str) -> Result<()> {
    for e in expected.entries().iter().filter(|e| e.name.starts_with(prefix)) {
        if got.id(&e.name).is_none() {
            return Err(Error::Checkpoint(format!("missing parameter {}", e.name)));
        }
    }
    for e in got.entries().iter().filter(|e| e.name.starts_with(prefix)) {
        if expected.id(&e.name).is_none() {
            return Err(Error::Checkpoint(format!("unexpected parameter {}", e.name)));
        }
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &DeepSleepNet, provenance: &Provenance) -> Result<()> {
    let bytes = encode(Scope::Full, &model.config, provenance, &model.params)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DeepSleepNet {
        let mut c = ModelConfig::for_sampling_rate(16).unwrap();
        c.lstm_hidden = 3;
        c.shortcut_width = 6;
        c.small.conv1_filters = 2;
        c.small.conv_filters = 2;
        c.large.conv1_filters = 2;
        c.large.conv_filters = 2;
        DeepSleepNet::build(c, 4).unwrap()
    }

    #[test]
    fn round_trip_full_and_cnn() {
        let model = tiny();
        let prov = Provenance {
            seed: 4,
            training_subjects: vec!["S01".into()],
            ..Provenance::default()
        };
        let bytes = encode(Scope::Full, &model.config, &prov, &model.params).unwrap();
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(ck.provenance, prov);
        assert_eq!(ck.params, model.params);
        let back = ck.clone().into_model().unwrap();
        assert_eq!(back.params, model.params);

        let cnn = model.params.subset(CNN_PREFIX);
        let bytes = encode(Scope::CnnOnly, &model.config, &prov, &cnn).unwrap();
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert!(ck.clone().into_model().is_err());
        assert_eq!(ck.into_cnn().unwrap(), cnn);
    }

    #[test]
    fn rejects_bad_input() {
        let model = tiny();
        let mut bytes = encode(Scope::Full, &model.config, &Provenance::default(), &model.params).unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 2;
        let err = Checkpoint::decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        let mut missing = model.params.subset(CNN_PREFIX);
        missing.weight("output.weights", Tensor::zeros([1]));
        let bytes = encode(Scope::Full, &model.config, &Provenance::default(), &missing).unwrap();
        assert!(Checkpoint::decode(&bytes).unwrap().into_model().is_err());
    }
}
