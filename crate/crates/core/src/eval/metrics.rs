use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Stage;
use crate::error::{Error, Result};

const K: usize = Stage::COUNT;

/// Rows are the expert stage, columns the predicted stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, truth: Stage, predicted: Stage) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

pub fn confusion(truth: &[Stage], predicted: &[Stage]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(
            "confusion",
            format!("{} labels but {} predictions", truth.len(), predicted.len()),
        ));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p);
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::invalid("accuracy", "empty confusion matrix")),
        n => Ok(cm.diagonal() as f64 / n as f64),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator forced one of the values to 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1, plus their macro-averaged F1.
pub fn per_class_and_mf1(cm: &ConfusionMatrix) -> ([ClassMetrics; K], f64) {
    let per: [ClassMetrics; K] = std::array::from_fn(|c| {
        let mut degenerate = false;
        let tp = cm.counts[c][c];
        let precision = ratio(tp, cm.col_sum(c), &mut degenerate);
        let recall = ratio(tp, cm.row_sum(c), &mut degenerate);
        let f1 = if precision + recall == 0.0 {
            degenerate = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            degenerate,
        }
    });
    let mf1 = per.iter().map(|m| m.f1).sum::<f64>() / K as f64;
    (per, mf1)
}

/// Cohen's kappa; undefined (an error) when chance agreement is 1.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return Err(Error::invalid("kappa", "empty confusion matrix"));
    }
    let po = cm.diagonal() as f64 / n;
    let pe = (0..K)
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if pe == 1.0 {
        return Err(Error::invalid(
            "kappa",
            "undefined: chance agreement is 1 (a single class on both sides)",
        ));
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Headline metrics of one confusion matrix, all as fractions in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_epochs: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when kappa is undefined.
    pub kappa: Option<f64>,
    pub per_class: [ClassMetrics; K],
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn new(cm: &ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(cm)?;
        let (per_class, macro_f1) = per_class_and_mf1(cm);
        Ok(MetricsReport {
            n_epochs: cm.total(),
            accuracy,
            macro_f1,
            kappa: kappa(cm).ok(),
            per_class,
            confusion: *cm,
        })
    }

    pub fn degenerate(&self) -> bool {
        self.kappa.is_none() || self.per_class.iter().any(|c| c.degenerate)
    }

    /// Confusion counts with PR/RE/F1 (percent) per row, comma separated.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("stage,W,N1,N2,N3,REM,PR,RE,F1\n");
        for s in Stage::ALL {
            let c = s.index();
            let m = &self.per_class[c];
            let counts: Vec<String> = self.confusion.counts[c].iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "{s},{},{:.1},{:.1},{:.1}\n",
                counts.join(","),
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1
            ));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kappa = self.kappa.map_or("undefined".to_string(), |k| format!("{k:.3}"));
        writeln!(
            f,
            "epochs {}  ACC {:.1}%  MF1 {:.1}  kappa {kappa}",
            self.n_epochs,
            100.0 * self.accuracy,
            100.0 * self.macro_f1
        )?;
        writeln!(f, "{:>5} {:>7} {:>7} {:>7} {:>7} {:>7} | {:>5} {:>5} {:>5}", "", "W", "N1", "N2", "N3", "REM", "PR", "RE", "F1")?;
        for s in Stage::ALL {
            let c = s.index();
            let m = &self.per_class[c];
            write!(f, "{:>5}", s.name())?;
            for v in &self.confusion.counts[c] {
                write!(f, " {v:>7}")?;
            }
            writeln!(
                f,
                " | {:>5.1} {:>5.1} {:>5.1}{}",
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                if m.degenerate { " *" } else { "" }
            )?;
        }
        Ok(())
    }
}
