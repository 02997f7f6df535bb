use super::labels::Label;
use super::{EpochRecord, Stage, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::EPOCH_SECONDS;

/// Wake epochs kept on each side of the sleep period (30 minutes).
pub const WAKE_MARGIN_EPOCHS: usize = 60;

/// Cuts `signal` into 30-s epochs according to per-epoch labels
/// (`(epoch_index, label)` pairs, e.g. from
/// [`annotations_to_epochs`](super::annotations::annotations_to_epochs)).
/// Excluded epochs are dropped; output is sorted by epoch index.
pub fn extract_epochs(
    subject_id: &str,
    signal: &[f64],
    fs: usize,
    labels: &[(usize, Label)],
) -> Result<SubjectRecording> {
    if fs == 0 {
        return Err(Error::Data("sampling rate must be positive".into()));
    }
    let len = fs * EPOCH_SECONDS;
    let mut labels: Vec<(usize, Stage)> = labels
        .iter()
        .filter_map(|&(i, l)| l.stage().map(|s| (i, s)))
        .collect();
    labels.sort_by_key(|&(i, _)| i);
    if let Some(w) = labels.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!(
            "subject {subject_id}: epoch {} labelled twice",
            w[0].0
        )));
    }
    let mut epochs = Vec::with_capacity(labels.len());
    for (index, stage) in labels {
        let start = index * len;
        let Some(samples) = signal.get(start..start + len) else {
            return Err(Error::Data(format!(
                "subject {subject_id}: epoch {index} needs samples {start}..{} but the signal has {}",
                start + len,
                signal.len()
            )));
        };
        epochs.push(EpochRecord {
            subject_id: subject_id.to_string(),
            epoch_index: index,
            samples: samples.iter().map(|&v| v as f32).collect(),
            stage,
        });
    }
    Ok(SubjectRecording {
        subject_id: subject_id.to_string(),
        fs,
        epochs,
    })
}

/// Keeps at most [`WAKE_MARGIN_EPOCHS`] wake epochs before the first and
/// after the last sleep epoch. Interior wake is untouched.
pub fn trim_wake(mut subject: SubjectRecording) -> Result<SubjectRecording> {
    let is_sleep = |e: &EpochRecord| e.stage != Stage::W;
    let (Some(first), Some(last)) = (
        subject.epochs.iter().position(is_sleep),
        subject.epochs.iter().rposition(is_sleep),
    ) else {
        return Err(Error::Data(format!(
            "subject {}: recording contains no sleep epochs",
            subject.subject_id
        )));
    };
    let start = first.saturating_sub(WAKE_MARGIN_EPOCHS);
    let end = (last + 1 + WAKE_MARGIN_EPOCHS).min(subject.epochs.len());
    subject.epochs.truncate(end);
    subject.epochs.drain(..start);
    Ok(subject)
}
