//! PSG + hypnogram to a trimmed [`SubjectRecording`], and the per-stage
//! manifest written alongside the epoch cache.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotations::{annotations_to_epochs, parse_sidecar, read_annotations, Annotation};
use super::edf::{parse_edf, EdfFile};
use super::epochs::{extract_epochs, trim_wake};
use super::labels::{map_label, ScoringStandard};
use super::{Stage, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::EPOCH_SECONDS;

/// Which EEG derivation to read from the PSG file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSpec {
    /// A channel stored in the file, e.g. `"EEG Fpz-Cz"`.
    Single(String),
    /// Re-referenced derivation `positive - negative`, e.g. F4 minus the
    /// left EOG.
    Difference { positive: String, negative: String },
}

impl std::fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelSpec::Single(c) => f.write_str(c),
            ChannelSpec::Difference { positive, negative } => write!(f, "{positive} - {negative}"),
        }
    }
}

/// Scoring for one recording.
#[derive(Clone, Debug)]
pub enum Hypnogram {
    Annotations(Vec<Annotation>),
    /// `(epoch_index, raw label)` lines from a sidecar file.
    Epochs(Vec<(usize, String)>),
}

fn find_channel(file: &EdfFile, label: &str) -> Result<(Vec<f64>, f64)> {
    let i = file.header.signal_index(label).ok_or_else(|| {
        Error::Data(format!(
            "channel {label:?} not found; available: {:?}",
            file.header.labels()
        ))
    })?;
    let rate = file.header.signals[i].sampling_rate(file.header.record_duration);
    Ok((file.physical(i)?, rate))
}

/// Reads the derivation in physical units and its (integer) sampling rate.
pub fn select_channel(file: &EdfFile, spec: &ChannelSpec) -> Result<(Vec<f64>, usize)> {
    let (signal, rate) = match spec {
        ChannelSpec::Single(label) => find_channel(file, label)?,
        ChannelSpec::Difference { positive, negative } => {
            let (mut a, ra) = find_channel(file, positive)?;
            let (b, rb) = find_channel(file, negative)?;
            if ra != rb || a.len() != b.len() {
                return Err(Error::Data(format!(
                    "cannot subtract {negative:?} ({rb} Hz) from {positive:?} ({ra} Hz)"
                )));
            }
            a.iter_mut().zip(&b).for_each(|(x, y)| *x -= y);
            (a, ra)
        }
    };
    if rate.fract() != 0.0 || rate < 1.0 {
        return Err(Error::Data(format!(
            "channel {spec} has non-integer sampling rate {rate} Hz"
        )));
    }
    Ok((signal, rate as usize))
}

/// Extracts, labels and (optionally) wake-trims one subject.
pub fn prepare_subject(
    subject_id: &str,
    psg: &EdfFile,
    hypnogram: &Hypnogram,
    channel: &ChannelSpec,
    standard: ScoringStandard,
    trim: bool,
) -> Result<SubjectRecording> {
    let (signal, fs) = select_channel(psg, channel)?;
    let raw = match hypnogram {
        Hypnogram::Annotations(a) => annotations_to_epochs(a, EPOCH_SECONDS as f64)?,
        Hypnogram::Epochs(e) => e.clone(),
    };
    let labels = raw
        .iter()
        .map(|(i, text)| Ok((*i, map_label(text, standard)?)))
        .collect::<Result<Vec<_>>>()?;
    let subject = extract_epochs(subject_id, &signal, fs, &labels)?;
    if trim {
        trim_wake(subject)
    } else {
        Ok(subject)
    }
}

/// Epoch counts per stage plus the total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    #[serde(rename = "N3")]
    pub n3: usize,
    #[serde(rename = "REM")]
    pub rem: usize,
    #[serde(rename = "Total")]
    pub total: usize,
}

impl StageCounts {
    pub fn from_array(c: [usize; Stage::COUNT]) -> Self {
        StageCounts {
            w: c[0],
            n1: c[1],
            n2: c[2],
            n3: c[3],
            rem: c[4],
            total: c.iter().sum(),
        }
    }

    pub fn as_array(&self) -> [usize; Stage::COUNT] {
        [self.w, self.n1, self.n2, self.n3, self.rem]
    }

    fn add(&mut self, o: &StageCounts) {
        let a = self.as_array();
        let b = o.as_array();
        *self = Self::from_array(std::array::from_fn(|i| a[i] + b[i]));
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub counts: StageCounts,
}

/// Summary of a prepared dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub fs: usize,
    pub channel: ChannelSpec,
    pub standard: ScoringStandard,
    /// Digest of the input files and preparation settings; a rerun with an
    /// unchanged digest can skip the work.
    pub input_hash: String,
    pub subjects: Vec<ManifestSubject>,
    pub totals: StageCounts,
}

impl Manifest {
    pub fn new(
        subjects: &[SubjectRecording],
        channel: ChannelSpec,
        standard: ScoringStandard,
        input_hash: String,
    ) -> Self {
        let mut totals = StageCounts::default();
        let entries = subjects
            .iter()
            .map(|s| {
                let counts = StageCounts::from_array(s.stage_counts());
                totals.add(&counts);
                ManifestSubject {
                    id: s.subject_id.clone(),
                    counts,
                }
            })
            .collect();
        Manifest {
            fs: subjects.first().map_or(0, |s| s.fs),
            channel,
            standard,
            input_hash,
            subjects: entries,
            totals,
        }
    }
}

/// A PSG file and the hypnogram scoring it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordingFiles {
    /// Recording identifier: the PSG file name without `-PSG.edf`.
    pub id: String,
    pub psg: PathBuf,
    /// `-Hypnogram.edf` (EDF+ annotations) or `-Hypnogram.csv` (sidecar).
    pub hypnogram: PathBuf,
}

const PSG_SUFFIX: &str = "-PSG.edf";
const HYPNOGRAM_SUFFIXES: [&str; 2] = ["-Hypnogram.edf", "-Hypnogram.csv"];

/// Pairs every `<id>-PSG.edf` in `dir` with a hypnogram. An exact
/// `<id>-Hypnogram.*` match wins; otherwise the unique hypnogram whose id
/// differs only in the last character is used (Sleep-EDF names the two
/// files of one night e.g. `SC4001E0` and `SC4001EC`). Sorted by id.
pub fn discover_recordings(dir: &Path) -> Result<Vec<RecordingFiles>> {
    let mut psgs = Vec::new();
    let mut hyps: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(id) = name.strip_suffix(PSG_SUFFIX) {
            psgs.push((id.to_string(), path.clone()));
        } else if let Some(id) = HYPNOGRAM_SUFFIXES.iter().find_map(|s| name.strip_suffix(s)) {
            hyps.push((id.to_string(), path.clone()));
        }
    }
    psgs.sort();
    hyps.sort();
    let stem = |id: &str| id[..id.len() - id.chars().last().map_or(0, char::len_utf8)].to_string();
    psgs.into_iter()
        .map(|(id, psg)| {
            let exact: Vec<_> = hyps.iter().filter(|(h, _)| *h == id).collect();
            let close: Vec<_> = hyps.iter().filter(|(h, _)| stem(h) == stem(&id)).collect();
            let hypnogram = match (exact.as_slice(), close.as_slice()) {
                ([(_, p)], _) | ([], [(_, p)]) => p.clone(),
                ([], []) => return Err(Error::Data(format!("no hypnogram found for {}", psg.display()))),
                _ => return Err(Error::Data(format!("several hypnograms match {}", psg.display()))),
            };
            Ok(RecordingFiles { id, psg, hypnogram })
        })
        .collect()
}

/// Reads the scoring of one recording from disk.
pub fn read_hypnogram(path: &Path) -> Result<Hypnogram> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Ok(Hypnogram::Epochs(parse_sidecar(&std::fs::read_to_string(path)?)?))
    } else {
        let file = parse_edf(&std::fs::read(path)?)?;
        Ok(Hypnogram::Annotations(read_annotations(&file)?))
    }
}

/// Fold group of a recording id: Sleep-EDF ids (`SC4ssN..`) map to the
/// subject `SC4ss` so both nights of a person share a fold; any other id is
/// its own group.
pub fn subject_group(id: &str) -> String {
    let b = id.as_bytes();
    if b.len() >= 6 && (id.starts_with("SC4") || id.starts_with("ST7")) && b[3..6].iter().all(u8::is_ascii_digit) {
        id[..5].to_string()
    } else {
        id.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::edf::{EdfHeader, SignalHeader};
    use crate::data::synthetic::{recording_to_edf, synthetic_subjects, SyntheticConfig};

    #[test]
    fn synthetic_recording_survives_preparation() {
        let cfg = SyntheticConfig { fs: 4, epochs_per_subject: 30, ..SyntheticConfig::default() };
        let subject = synthetic_subjects(&cfg, 1, 9).remove(0);
        let (psg, anns) = recording_to_edf(&subject, "EEG Fpz-Cz");
        let got = prepare_subject(
            "S00",
            &psg,
            &Hypnogram::Annotations(anns),
            &ChannelSpec::Single("EEG Fpz-Cz".into()),
            ScoringStandard::Rk,
            true,
        )
        .unwrap();
        assert_eq!(got.stages(), subject.stages());
        let step = 2.0 * 250.0 / 65535.0;
        for (a, b) in got.epochs.iter().zip(&subject.epochs) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert!((x - y).abs() as f64 <= step, "{x} vs {y}");
            }
        }
        let m = Manifest::new(&[got], ChannelSpec::Single("x".into()), ScoringStandard::Rk, "h".into());
        assert_eq!(m.totals.total, 30);
        assert_eq!(m.totals.as_array().iter().sum::<usize>(), 30);
    }

    #[test]
    fn difference_channel_and_missing_label() {
        let mut a = SignalHeader::new("F4", 2, -100.0, 100.0);
        a.digital_min = -100;
        a.digital_max = 100;
        let b = SignalHeader { label: "EOG Left".into(), ..a.clone() };
        let file = EdfFile {
            header: EdfHeader::new(vec![a, b], 1, 1.0),
            signals: vec![vec![10, 20], vec![3, -4]],
        };
        let spec = ChannelSpec::Difference { positive: "F4".into(), negative: "EOG Left".into() };
        let (sig, fs) = select_channel(&file, &spec).unwrap();
        assert_eq!(fs, 2);
        assert_eq!(sig, vec![7.0, 24.0]);
        let err = select_channel(&file, &ChannelSpec::Single("Cz".into())).unwrap_err().to_string();
        assert!(err.contains("EOG Left"), "{err}");
    }

    #[test]
    fn discovery_pairs_sleep_edf_names() {
        let dir = std::env::temp_dir().join(format!("dsn-discover-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for f in ["SC4001E0-PSG.edf", "SC4001EC-Hypnogram.edf", "x-PSG.edf", "x-Hypnogram.csv", "notes.txt"] {
            std::fs::write(dir.join(f), b"").unwrap();
        }
        let found = discover_recordings(&dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].id, "SC4001E0");
        assert!(found[0].hypnogram.ends_with("SC4001EC-Hypnogram.edf"));
        assert!(found[1].hypnogram.ends_with("x-Hypnogram.csv"));
        assert_eq!(subject_group("SC4001E0"), "SC400");
        assert_eq!(subject_group("SC4012E0"), "SC401");
        assert_eq!(subject_group("night7"), "night7");
    }
}
