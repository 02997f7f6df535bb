//! What the trained network looks at: per-stage activity of the first
//! convolution filters, and traces of individual LSTM memory cells.

use serde::{Deserialize, Serialize};

use crate::data::{EpochRecord, Stage, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::{argmax, epochs_tensor, DeepSleepNet};
use crate::nn::{Binder, Session};

const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Small,
    Large,
}

/// Rescaled filter activity, one row per stage (W..REM), one column per
/// first-layer filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterActivationMap {
    pub branch: Branch,
    pub u: Vec<Vec<f64>>,
    /// Stages no epoch was predicted as; their rows are all zero.
    pub empty_stages: Vec<Stage>,
}

impl FilterActivationMap {
    /// Filter order that groups filters by the stage they are most active
    /// for, strongest first within each group.
    pub fn grouped_order(&self) -> Vec<usize> {
        let k = self.u.first().map_or(0, Vec::len);
        let column = |f: usize| self.u.iter().map(|r| r[f]).collect::<Vec<_>>();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (column(a), column(b));
            let (sa, sb) = (argmax(&ca), argmax(&cb));
            sa.cmp(&sb).then(cb[sb].total_cmp(&ca[sa]))
        });
        order
    }
}

fn rescale(row: &mut [f64]) {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in row {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Average summed first-layer activation per filter for the epochs
/// predicted as each stage, min-max rescaled per stage. Returns the small
/// and the large branch maps.
pub fn filter_activations(
    model: &DeepSleepNet,
    epochs: &[EpochRecord],
    predicted: &[Stage],
) -> Result<[FilterActivationMap; 2]> {
    if epochs.is_empty() {
        return Err(Error::invalid("filter_activations", "no predictions to analyse"));
    }
    if epochs.len() != predicted.len() {
        return Err(Error::invalid(
            "filter_activations",
            format!("{} epochs but {} predictions", epochs.len(), predicted.len()),
        ));
    }
    let len = model.config.epoch_len();
    let mut counts = [0usize; Stage::COUNT];
    for s in predicted {
        counts[s.index()] += 1;
    }
    let mut maps = Vec::with_capacity(2);
    for (branch, cnn) in [(Branch::Small, &model.small), (Branch::Large, &model.large)] {
        let k = cnn.conv1.out_ch;
        let mut sums = vec![vec![0.0; k]; Stage::COUNT];
        for (chunk, stages) in epochs.chunks(CHUNK).zip(predicted.chunks(CHUNK)) {
            let mut s = Session::eval();
            let mut p = Binder::new(&model.params, false);
            let x = s.graph.constant(epochs_tensor(chunk, len)?);
            let z = cnn.first_layer(&mut s, &mut p, x)?;
            let z = s.graph.value(z);
            let per_epoch = z.len() / chunk.len();
            for (e, stage) in z.data().chunks_exact(per_epoch).zip(stages) {
                let row = &mut sums[stage.index()];
                for pos in e.chunks_exact(k) {
                    for (acc, v) in row.iter_mut().zip(pos) {
                        *acc += v;
                    }
                }
            }
        }
        let mut empty = Vec::new();
        for (c, row) in sums.iter_mut().enumerate() {
            if counts[c] == 0 {
                empty.push(Stage::ALL[c]);
                continue;
            }
            row.iter_mut().for_each(|v| *v /= counts[c] as f64);
            rescale(row);
        }
        maps.push(FilterActivationMap {
            branch,
            u: sums,
            empty_stages: empty,
        });
    }
    let large = maps.pop().expect("two maps");
    let small = maps.pop().expect("two maps");
    Ok([small, large])
}

/// `tanh(c)` of selected first-layer forward LSTM cells after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTrace {
    pub cells: Vec<usize>,
    pub epoch_index: Vec<usize>,
    pub predicted: Vec<Stage>,
    /// One row per epoch, one value per requested cell.
    pub values: Vec<Vec<f64>>,
}

pub fn cell_trace(model: &DeepSleepNet, subject: &SubjectRecording, cells: &[usize]) -> Result<CellTrace> {
    if cells.is_empty() {
        return Err(Error::invalid("cell_trace", "no cells requested"));
    }
    let (preds, values) = model.score_subject(subject, cells)?;
    Ok(CellTrace {
        cells: cells.to_vec(),
        epoch_index: preds.iter().map(|p| p.epoch_index).collect(),
        predicted: preds.iter().map(|p| p.stage).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_rows() {
        let mut r = vec![2.0, 4.0, 3.0];
        rescale(&mut r);
        assert_eq!(r, vec![0.0, 1.0, 0.5]);
        let mut flat = vec![7.0; 3];
        rescale(&mut flat);
        assert_eq!(flat, vec![0.0; 3]);
    }

    #[test]
    fn grouping_orders_by_stage() {
        let mut u = vec![vec![0.0; 3]; 5];
        u[4][0] = 1.0;
        u[0][1] = 0.5;
        u[0][2] = 0.9;
        let map = FilterActivationMap { branch: Branch::Small, u, empty_stages: vec![] };
        assert_eq!(map.grouped_order(), vec![2, 1, 0]);
    }
}
