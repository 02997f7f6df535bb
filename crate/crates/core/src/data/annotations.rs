//! Hypnogram sources: EDF+ time-stamped annotation lists (TALs) and a plain
//! `epoch_index,stage` sidecar.

use super::edf::{bytes_to_samples, EdfFile, EdfHeader, SignalHeader};
use super::Stage;
use crate::error::{Error, Result};

const ONSET_DURATION: u8 = 0x15;
const FIELD_END: u8 = 0x14;
const TAL_END: u8 = 0x00;

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    /// Seconds from the recording start.
    pub onset: f64,
    pub duration: Option<f64>,
    pub text: String,
}

fn parse_seconds(raw: &str, record: &str, what: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Annotation {
        record: record.to_string(),
        msg: format!("{what} {raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Annotation {
            record: record.to_string(),
            msg: format!("{what} {raw:?} is not finite"),
        });
    }
    Ok(v)
}

/// Parses one annotation-channel data record. Time-keeping TALs (those
/// without annotation text) are skipped; trailing zero padding is ignored.
pub fn parse_tal_record(bytes: &[u8], record: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    let mut tals: Vec<&[u8]> = bytes.split(|&b| b == TAL_END).collect();
    // The piece after the final 0x00 must be empty for a terminated record.
    if let Some(tail) = tals.pop() {
        if !tail.is_empty() {
            return Err(Error::Annotation {
                record: record.to_string(),
                msg: "TAL is missing its 0x00 terminator".into(),
            });
        }
    }
    for tal in tals {
        if tal.is_empty() {
            continue;
        }
        let text = std::str::from_utf8(tal).map_err(|_| Error::Annotation {
            record: record.to_string(),
            msg: "TAL is not valid UTF-8".into(),
        })?;
        let mut fields = text.split(FIELD_END as char);
        let timing = fields.next().unwrap_or_default();
        if !timing.starts_with(['+', '-']) {
            return Err(Error::Annotation {
                record: record.to_string(),
                msg: format!("TAL onset {timing:?} must start with '+' or '-'"),
            });
        }
        let (onset_raw, duration_raw) = match timing.split_once(ONSET_DURATION as char) {
            Some((o, d)) => (o, Some(d)),
            None => (timing, None),
        };
        let onset = parse_seconds(onset_raw, record, "onset")?;
        let duration = duration_raw
            .map(|d| parse_seconds(d, record, "duration"))
            .transpose()?;
        for label in fields.filter(|f| !f.is_empty()) {
            out.push(Annotation {
                onset,
                duration,
                text: label.to_string(),
            });
        }
    }
    Ok(out)
}

fn format_seconds(v: f64) -> String {
    let sign = if v < 0.0 { "-" } else { "+" };
    format!("{sign}{}", v.abs())
}

/// Encodes annotations as TALs, one per annotation.
pub fn encode_tals(annotations: &[Annotation]) -> Vec<u8> {
    let mut out = Vec::new();
    for a in annotations {
        out.extend_from_slice(format_seconds(a.onset).as_bytes());
        if let Some(d) = a.duration {
            out.push(ONSET_DURATION);
            out.extend_from_slice(format!("{d}").as_bytes());
        }
        out.push(FIELD_END);
        out.extend_from_slice(a.text.as_bytes());
        out.push(FIELD_END);
        out.push(TAL_END);
    }
    out
}

/// Reads all annotations from the EDF+ annotation channel of `file`.
pub fn read_annotations(file: &EdfFile) -> Result<Vec<Annotation>> {
    let channel = file
        .header
        .signals
        .iter()
        .position(SignalHeader::is_annotation)
        .ok_or_else(|| Error::Annotation {
            record: "header".into(),
            msg: format!(
                "no annotation channel; signals are {:?}",
                file.header.labels()
            ),
        })?;
    let mut out = Vec::new();
    for (i, rec) in file.record_bytes(channel).iter().enumerate() {
        out.extend(parse_tal_record(rec, &format!("data record {i}"))?);
    }
    Ok(out)
}

/// Builds a single-record EDF+ hypnogram file holding `annotations`.
pub fn hypnogram_edf(annotations: &[Annotation]) -> EdfFile {
    let mut bytes = b"+0\x14\x14\x00".to_vec();
    bytes.extend(encode_tals(annotations));
    let spr = bytes.len().div_ceil(2).max(1);
    let mut header = EdfHeader::new(vec![SignalHeader::annotations(spr)], 1, 0.0);
    header.reserved = "EDF+C".to_string();
    EdfFile {
        header,
        signals: vec![bytes_to_samples(&bytes, spr)],
    }
}

/// Expands stage annotations into per-epoch raw labels. Each annotation
/// covers `duration / epoch_seconds` epochs starting at its onset; epochs
/// no annotation covers are absent from the result.
pub fn annotations_to_epochs(
    annotations: &[Annotation],
    epoch_seconds: f64,
) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for a in annotations {
        let duration = a.duration.unwrap_or(epoch_seconds);
        if a.onset < 0.0 {
            return Err(Error::Annotation {
                record: a.text.clone(),
                msg: format!("negative onset {}", a.onset),
            });
        }
        let first = (a.onset / epoch_seconds).round() as usize;
        let count = (duration / epoch_seconds).round() as usize;
        out.extend((first..first + count).map(|i| (i, a.text.clone())));
    }
    Ok(out)
}

/// Parses `epoch_index,stage` lines. Blank lines and `#` comments are
/// ignored, as is a leading header line.
pub fn parse_sidecar(text: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((idx, label)) = line.split_once(',') else {
            return Err(Error::Annotation {
                record: format!("line {}", n + 1),
                msg: format!("expected 'epoch_index,stage', got {line:?}"),
            });
        };
        match idx.trim().parse::<usize>() {
            Ok(i) => out.push((i, label.trim().to_string())),
            Err(_) if n == 0 => continue,
            Err(_) => {
                return Err(Error::Annotation {
                    record: format!("line {}", n + 1),
                    msg: format!("epoch index {idx:?} is not an integer"),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_sidecar(stages: &[(usize, Stage)]) -> String {
    let mut out = String::from("epoch_index,stage\n");
    for (i, s) in stages {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}
