//! Recordings in, training-ready epochs out.
//!
//! The pipeline is: [`edf::parse_edf`] the PSG file, pick (or derive) the
//! EEG channel, read the hypnogram ([`annotations`] or a sidecar file), map
//! raw labels to five stages ([`labels`]), cut 30-s epochs and trim
//! out-of-bed wake ([`epochs`]). Training then uses [`balance::oversample`]
//! for pre-training and [`batching::arrange_sequences`] for fine-tuning;
//! [`folds::split_folds`] assigns subjects to cross-validation folds.

pub mod annotations;
pub mod balance;
pub mod batching;
pub mod cache;
pub mod edf;
pub mod epochs;
pub mod folds;
pub mod labels;
pub mod prepare;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use annotations::Annotation;
pub use balance::oversample;
pub use batching::{arrange_sequences, Lane, SequenceBatch};
pub use epochs::{extract_epochs, trim_wake, WAKE_MARGIN_EPOCHS};
pub use folds::{split_folds, split_grouped_folds, Fold};
pub use labels::{map_label, Label, ScoringStandard};

/// The five scored sleep stages, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    W,
    N1,
    N2,
    N3,
    #[serde(rename = "REM")]
    Rem,
}

impl Stage {
    pub const COUNT: usize = 5;
    pub const ALL: [Stage; 5] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W" | "WAKE" => Ok(Stage::W),
            "N1" => Ok(Stage::N1),
            "N2" => Ok(Stage::N2),
            "N3" => Ok(Stage::N3),
            "REM" | "R" => Ok(Stage::Rem),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// One 30-s epoch of a single EEG channel in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub subject_id: String,
    /// Position of the epoch in the original recording.
    pub epoch_index: usize,
    pub samples: Vec<f32>,
    pub stage: Stage,
}

/// A subject's retained epochs in recording order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub fs: usize,
    pub epochs: Vec<EpochRecord>,
}

impl SubjectRecording {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.epochs.iter().map(|e| e.stage).collect()
    }

    pub fn stage_counts(&self) -> [usize; Stage::COUNT] {
        stage_counts(self.epochs.iter().map(|e| e.stage))
    }
}

pub fn stage_counts(stages: impl IntoIterator<Item = Stage>) -> [usize; Stage::COUNT] {
    let mut counts = [0; Stage::COUNT];
    for s in stages {
        counts[s.index()] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            assert_eq!(Stage::from_index(s.index()), Some(s));
        }
        assert!("N4".parse::<Stage>().is_err());
    }
}
