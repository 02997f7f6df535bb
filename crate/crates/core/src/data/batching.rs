use std::ops::Range;

use super::SubjectRecording;
use crate::error::{Error, Result};

/// A contiguous slice of one subject's epochs processed by one LSTM lane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lane {
    /// Epoch positions (into `SubjectRecording::epochs`) covered by the lane.
    pub span: Range<usize>,
}

/// One fine-tuning step: the next `seq_len` epochs of every lane of one
/// subject. Lanes near the end of a subject may be shorter or empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceBatch {
    /// Index into the subject list.
    pub subject: usize,
    /// Step number within the subject; state is reset when this is 0.
    pub step: usize,
    /// Epoch positions consumed by each lane at this step.
    pub lanes: Vec<Range<usize>>,
}

impl SequenceBatch {
    pub fn starts_subject(&self) -> bool {
        self.step == 0
    }

    pub fn lens(&self) -> Vec<usize> {
        self.lanes.iter().map(|r| r.len()).collect()
    }

    /// Epoch positions in lane-major order (the LSTM row order).
    pub fn positions(&self) -> Vec<usize> {
        self.lanes.iter().flat_map(|r| r.clone()).collect()
    }
}

/// Splits `len` epochs into `lanes` equal contiguous spans; the remainder
/// goes to the last span.
pub fn split_lanes(len: usize, lanes: usize) -> Result<Vec<Lane>> {
    if lanes == 0 {
        return Err(Error::invalid("split lanes", "need at least one lane"));
    }
    if len < lanes {
        return Err(Error::Data(format!(
            "{len} epochs cannot fill {lanes} sub-sequences"
        )));
    }
    let base = len / lanes;
    Ok((0..lanes)
        .map(|i| {
            let end = if i + 1 == lanes { len } else { (i + 1) * base };
            Lane { span: i * base..end }
        })
        .collect())
}

/// Arranges subjects into fine-tuning steps. Each subject is split into
/// `lanes` sub-sequences that advance `seq_len` epochs per step; lanes
/// never cross a subject boundary.
pub fn arrange_sequences(
    subjects: &[SubjectRecording],
    lanes: usize,
    seq_len: usize,
) -> Result<Vec<SequenceBatch>> {
    if seq_len == 0 {
        return Err(Error::invalid("arrange sequences", "sequence length must be positive"));
    }
    let mut out = Vec::new();
    for (si, subject) in subjects.iter().enumerate() {
        let spans = split_lanes(subject.len(), lanes)
            .map_err(|e| Error::Data(format!("subject {}: {e}", subject.subject_id)))?;
        let longest = spans.iter().map(|l| l.span.len()).max().unwrap_or(0);
        for step in 0..longest.div_ceil(seq_len) {
            let lanes = spans
                .iter()
                .map(|l| {
                    let start = (l.span.start + step * seq_len).min(l.span.end);
                    start..(start + seq_len).min(l.span.end)
                })
                .collect();
            out.push(SequenceBatch {
                subject: si,
                step,
                lanes,
            });
        }
    }
    Ok(out)
}
