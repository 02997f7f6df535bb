//! Generated recordings for tests, benchmarks and demos.
//!
//! Each stage has its own frequency bands, so stages are separable from the
//! raw signal; labels follow a sticky Markov chain so that neighbouring
//! epochs carry sequence information.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::annotations::Annotation;
use super::edf::{EdfFile, EdfHeader, SignalHeader};
use super::{EpochRecord, Stage, SubjectRecording};
use crate::model::EPOCH_SECONDS;

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub fs: usize,
    pub epochs_per_subject: usize,
    /// Probability that the next epoch keeps the current stage.
    pub stay_probability: f64,
    /// Half-width of the uniform background noise, in µV.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            fs: 100,
            epochs_per_subject: 200,
            stay_probability: 0.9,
            noise: 5.0,
        }
    }
}

/// `(low Hz, high Hz, amplitude µV)` components of each stage.
fn bands(stage: Stage) -> &'static [(f64, f64, f64)] {
    match stage {
        Stage::W => &[(18.0, 25.0, 15.0), (8.0, 10.0, 10.0)],
        Stage::N1 => &[(4.0, 7.0, 20.0)],
        Stage::N2 => &[(11.0, 15.0, 25.0)],
        Stage::N3 => &[(0.5, 2.0, 60.0)],
        Stage::Rem => &[(2.0, 4.0, 15.0), (26.0, 32.0, 8.0)],
    }
}

/// One epoch of band-limited oscillation for `stage`.
pub fn synthetic_epoch<R: Rng + ?Sized>(stage: Stage, fs: usize, noise: f64, rng: &mut R) -> Vec<f32> {
    const TONES_PER_BAND: usize = 3;
    let len = fs * EPOCH_SECONDS;
    let mut x = vec![0.0f64; len];
    for &(lo, hi, amp) in bands(stage) {
        for _ in 0..TONES_PER_BAND {
            let f = rng.gen_range(lo..hi);
            let phase = rng.gen_range(0.0..TAU);
            let a = amp * rng.gen_range(0.7..1.3) / TONES_PER_BAND as f64;
            for (t, v) in x.iter_mut().enumerate() {
                *v += a * (TAU * f * t as f64 / fs as f64 + phase).sin();
            }
        }
    }
    x.iter()
        .map(|&v| (v + rng.gen_range(-noise..=noise)) as f32)
        .collect()
}

/// A sticky Markov label sequence containing every stage at least once
/// (for `len >= 5`).
pub fn markov_stages<R: Rng + ?Sized>(len: usize, stay: f64, rng: &mut R) -> Vec<Stage> {
    loop {
        let mut current = Stage::ALL[rng.gen_range(0..Stage::COUNT)];
        let seq: Vec<Stage> = (0..len)
            .map(|_| {
                let s = current;
                if !rng.gen_bool(stay) {
                    current = Stage::ALL[rng.gen_range(0..Stage::COUNT)];
                }
                s
            })
            .collect();
        if len < Stage::COUNT || Stage::ALL.iter().all(|s| seq.contains(s)) {
            return seq;
        }
    }
}

/// `n_subjects` recordings named `S00`, `S01`, ...; deterministic in `seed`.
pub fn synthetic_subjects(cfg: &SyntheticConfig, n_subjects: usize, seed: u64) -> Vec<SubjectRecording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_subjects)
        .map(|i| {
            let id = format!("S{i:02}");
            let stages = markov_stages(cfg.epochs_per_subject, cfg.stay_probability, &mut rng);
            let epochs = stages
                .into_iter()
                .enumerate()
                .map(|(epoch_index, stage)| EpochRecord {
                    subject_id: id.clone(),
                    epoch_index,
                    samples: synthetic_epoch(stage, cfg.fs, cfg.noise, &mut rng),
                    stage,
                })
                .collect();
            SubjectRecording {
                subject_id: id,
                fs: cfg.fs,
                epochs,
            }
        })
        .collect()
}

/// Physical range used when writing synthetic signals to EDF.
pub const SYNTHETIC_RANGE_UV: f64 = 250.0;

/// Writes a recording as a one-channel EDF (one 30-s record per epoch) and
/// returns it with the matching stage annotations.
pub fn recording_to_edf(subject: &SubjectRecording, channel: &str) -> (EdfFile, Vec<Annotation>) {
    let len = subject.fs * EPOCH_SECONDS;
    let n = subject.epochs.last().map_or(0, |e| e.epoch_index + 1);
    let spec = SignalHeader::new(channel, len, -SYNTHETIC_RANGE_UV, SYNTHETIC_RANGE_UV);
    let gain = (spec.physical_max - spec.physical_min)
        / (f64::from(spec.digital_max) - f64::from(spec.digital_min));
    let mut digital = vec![0i16; n * len];
    for e in &subject.epochs {
        let out = &mut digital[e.epoch_index * len..(e.epoch_index + 1) * len];
        for (d, &v) in out.iter_mut().zip(&e.samples) {
            let code = (f64::from(v) - spec.physical_min) / gain + f64::from(spec.digital_min);
            *d = code.round().clamp(-32768.0, 32767.0) as i16;
        }
    }
    let mut header = EdfHeader::new(vec![spec], n, EPOCH_SECONDS as f64);
    header.patient = subject.subject_id.clone();
    let annotations = subject
        .epochs
        .iter()
        .map(|e| Annotation {
            onset: (e.epoch_index * EPOCH_SECONDS) as f64,
            duration: Some(EPOCH_SECONDS as f64),
            text: format!("Sleep stage {}", match e.stage {
                Stage::W => "W",
                Stage::N1 => "1",
                Stage::N2 => "2",
                Stage::N3 => "3",
                Stage::Rem => "R",
            }),
        })
        .collect();
    (
        EdfFile {
            header,
            signals: vec![digital],
        },
        annotations,
    )
}

fn random_text<R: Rng + ?Sized>(rng: &mut R, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    let mut s: String = (0..len).map(|_| rng.gen_range(b'!'..=b'~') as char).collect();
    // Interior spaces survive; trailing ones are padding.
    if len > 2 {
        s.replace_range(1..2, " ");
    }
    s
}

/// A random, well-formed EDF file with `n_signals` signals and
/// `n_records` records. Header text fields avoid trailing spaces so the
/// file survives a write/parse/write cycle byte for byte.
pub fn random_edf<R: Rng + ?Sized>(rng: &mut R, n_signals: usize, n_records: usize) -> EdfFile {
    let signals: Vec<SignalHeader> = (0..n_signals)
        .map(|_| {
            let pmin = -f64::from(rng.gen_range(1..5000));
            let pmax = f64::from(rng.gen_range(1..5000)) / 4.0;
            let dmin = rng.gen_range(-32768..0);
            let dmax = rng.gen_range(1..=32767);
            SignalHeader {
                label: random_text(rng, 16),
                transducer: random_text(rng, 80),
                physical_dimension: random_text(rng, 8),
                physical_min: pmin,
                physical_max: pmax,
                digital_min: dmin,
                digital_max: dmax,
                prefiltering: random_text(rng, 80),
                samples_per_record: rng.gen_range(1..64),
                reserved: random_text(rng, 32),
            }
        })
        .collect();
    let data = signals
        .iter()
        .map(|s| {
            (0..s.samples_per_record * n_records)
                .map(|_| rng.gen_range(s.digital_min..=s.digital_max) as i16)
                .collect()
        })
        .collect();
    let mut header = EdfHeader::new(signals, n_records, f64::from(rng.gen_range(1..=30)));
    header.patient = random_text(rng, 80);
    header.recording = random_text(rng, 80);
    header.start_date = format!("{:02}.{:02}.{:02}", rng.gen_range(1..=28), rng.gen_range(1..=12), rng.gen_range(0..100));
    header.start_time = format!("{:02}.{:02}.{:02}", rng.gen_range(0..24), rng.gen_range(0..60), rng.gen_range(0..60));
    EdfFile {
        header,
        signals: data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_complete() {
        let cfg = SyntheticConfig { fs: 10, epochs_per_subject: 50, ..SyntheticConfig::default() };
        let a = synthetic_subjects(&cfg, 2, 3);
        assert_eq!(a, synthetic_subjects(&cfg, 2, 3));
        for s in &a {
            assert_eq!(s.len(), 50);
            assert!(s.stage_counts().iter().all(|&c| c > 0));
            assert!(s.epochs.iter().all(|e| e.samples.len() == 300));
        }
    }

    #[test]
    fn stages_differ_in_dominant_frequency() {
        // Zero-crossing rate separates slow-wave from wake activity.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let crossings = |x: &[f32]| x.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
        let n3 = crossings(&synthetic_epoch(Stage::N3, 100, 0.0, &mut rng));
        let w = crossings(&synthetic_epoch(Stage::W, 100, 0.0, &mut rng));
        assert!(w > 5 * n3, "W {w} vs N3 {n3}");
    }
}
