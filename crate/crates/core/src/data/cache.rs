//! Prepared-epoch cache.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `DSNEPOCH` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | index length `n` (`u64`) |
//! | n     | UTF-8 JSON index: `fs`, and per subject `id`, `epoch_index[]`, `stage[]` |
//! | rest  | samples as `f32`, subjects in index order, epochs in order, `fs*30` each |

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Stage, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::EPOCH_SECONDS;

pub const CACHE_MAGIC: &[u8; 8] = b"DSNEPOCH";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Index {
    fs: usize,
    subjects: Vec<SubjectIndex>,
}

#[derive(Serialize, Deserialize)]
struct SubjectIndex {
    id: String,
    epoch_index: Vec<usize>,
    stage: Vec<Stage>,
}

pub fn write_cache(subjects: &[SubjectRecording]) -> Result<Vec<u8>> {
    let fs = subjects.first().map_or(0, |s| s.fs);
    let len = fs * EPOCH_SECONDS;
    let mut index = Index {
        fs,
        subjects: Vec::with_capacity(subjects.len()),
    };
    let total: usize = subjects.iter().map(SubjectRecording::len).sum();
    let mut samples = Vec::with_capacity(total * len * 4);
    for s in subjects {
        if s.fs != fs {
            return Err(Error::Data(format!(
                "subject {} has fs {}, cache holds fs {fs}",
                s.subject_id, s.fs
            )));
        }
        for e in &s.epochs {
            if e.samples.len() != len {
                return Err(Error::Data(format!(
                    "subject {} epoch {} has {} samples, expected {len}",
                    s.subject_id,
                    e.epoch_index,
                    e.samples.len()
                )));
            }
            samples.extend(e.samples.iter().flat_map(|v| v.to_le_bytes()));
        }
        index.subjects.push(SubjectIndex {
            id: s.subject_id.clone(),
            epoch_index: s.epochs.iter().map(|e| e.epoch_index).collect(),
            stage: s.stages(),
        });
    }
    let json = serde_json::to_vec(&index)?;
    let mut out = Vec::with_capacity(20 + json.len() + samples.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&samples);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let chunk = bytes
        .get(*pos..pos.saturating_add(n))
        .ok_or_else(|| Error::Data(format!("epoch cache truncated while reading {what}")))?;
    *pos += n;
    Ok(chunk)
}

pub fn read_cache(bytes: &[u8]) -> Result<Vec<SubjectRecording>> {
    let mut pos = 0;
    if take(bytes, &mut pos, 8, "magic")? != CACHE_MAGIC {
        return Err(Error::Data("not an epoch cache (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4, "version")?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Data(format!(
            "epoch cache version {version} is not supported (expected {CACHE_VERSION})"
        )));
    }
    let n = u64::from_le_bytes(take(bytes, &mut pos, 8, "index length")?.try_into().unwrap());
    let index: Index = serde_json::from_slice(take(bytes, &mut pos, n as usize, "index")?)?;
    let len = index.fs * EPOCH_SECONDS;
    let mut subjects = Vec::with_capacity(index.subjects.len());
    for s in index.subjects {
        if s.epoch_index.len() != s.stage.len() {
            return Err(Error::Data(format!(
                "epoch cache index for {} is inconsistent",
                s.id
            )));
        }
        let mut epochs = Vec::with_capacity(s.stage.len());
        for (&epoch_index, &stage) in s.epoch_index.iter().zip(&s.stage) {
            let raw = take(bytes, &mut pos, len * 4, "samples")?;
            epochs.push(EpochRecord {
                subject_id: s.id.clone(),
                epoch_index,
                samples: raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
                stage,
            });
        }
        subjects.push(SubjectRecording {
            subject_id: s.id,
            fs: index.fs,
            epochs,
        });
    }
    if pos != bytes.len() {
        return Err(Error::Data(format!(
            "epoch cache has {} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(subjects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{synthetic_subjects, SyntheticConfig};

    #[test]
    fn round_trip_and_corruption() {
        let cfg = SyntheticConfig { fs: 2, epochs_per_subject: 7, ..SyntheticConfig::default() };
        let subjects = synthetic_subjects(&cfg, 3, 5);
        let bytes = write_cache(&subjects).unwrap();
        assert_eq!(read_cache(&bytes).unwrap(), subjects);
        assert!(read_cache(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_cache(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes;
        bad[8] = 9;
        assert!(read_cache(&bad).unwrap_err().to_string().contains("version"));
    }
}
