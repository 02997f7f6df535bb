//! Two-step training: class-balanced pre-training of the CNN branches, then
//! sequential fine-tuning of the whole network with per-group learning
//! rates and gradient clipping.

mod finetune;
mod optim;
mod pretrain;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{balance, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::DeepSleepNet;

pub use finetune::{finetune, replace_cnns, FinetuneOutcome};
pub use optim::{
    clip_global_norm, l2_penalty, learning_rates, param_groups, AdamState, ParamGroup, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPSILON,
};
pub use pretrain::{pretrain, PretrainOutcome, PRETRAIN_HEAD};

/// Hyper-parameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    /// Passes over the oversampled set.
    pub n_pretrain_epochs: usize,
    /// Passes over the sequential set.
    pub n_finetune_epochs: usize,
    pub pretrain_batch: usize,
    /// Parallel sub-sequences (lanes) per subject during fine-tuning.
    pub finetune_batch: usize,
    pub seq_len: usize,
    pub lr_pretrain: f64,
    /// Fine-tuning rate of the CNN branches.
    pub lr1: f64,
    /// Fine-tuning rate of the sequence part and output layer.
    pub lr2: f64,
    pub clip_threshold: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            n_pretrain_epochs: 100,
            n_finetune_epochs: 200,
            pretrain_batch: 100,
            finetune_batch: 10,
            seq_len: 25,
            lr_pretrain: 1e-4,
            lr1: 1e-6,
            lr2: 1e-4,
            clip_threshold: 10.0,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

impl TrainPlan {
    /// Counts and sizes must be positive. Learning rates must be finite and
    /// non-negative (zero freezes a group) with `lr1 < lr2`.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("pretrain_batch", self.pretrain_batch),
            ("finetune_batch", self.finetune_batch),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid("train plan", format!("{name} must be positive")));
        }
        if self.pretrain_batch < 2 {
            return Err(Error::invalid("train plan", "pretrain_batch must be at least 2 for batch norm"));
        }
        let rates = [
            ("lr_pretrain", self.lr_pretrain),
            ("lr1", self.lr1),
            ("lr2", self.lr2),
            ("weight_decay", self.weight_decay),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("train plan", format!("{name} = {v} must be finite and >= 0")));
        }
        if self.lr1 >= self.lr2 {
            return Err(Error::invalid(
                "train plan",
                format!("lr1 ({}) must be below lr2 ({})", self.lr1, self.lr2),
            ));
        }
        if self.clip_threshold.is_nan() || self.clip_threshold <= 0.0 {
            return Err(Error::invalid("train plan", "clip_threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        })
    }
}

/// One optimizer step, as written to the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    /// 1-based pass number.
    pub pass: usize,
    /// Step number within the pass, 1-based.
    pub step: usize,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub lr_cnn: f64,
    pub lr_sequence: f64,
}

impl StepRecord {
    pub const HEADER: &'static str = "phase,pass,step,loss,grad_norm,lr_cnn,lr_sequence";
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.phase, self.pass, self.step, self.loss, self.grad_norm, self.lr_cnn, self.lr_sequence
        )
    }
}

/// Hooks into a training run. All methods default to no-ops.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    /// Called whenever fine-tuning resets the LSTM state for a subject.
    fn on_state_reset(&mut self, _pass: usize, _subject: &str) {}
}

impl TrainObserver for () {}

/// Observer that keeps everything it sees.
#[derive(Clone, Debug, Default)]
pub struct StepLog {
    pub steps: Vec<StepRecord>,
    pub resets: Vec<(usize, String)>,
}

impl TrainObserver for StepLog {
    fn on_step(&mut self, record: &StepRecord) {
        self.steps.push(record.clone());
    }

    fn on_state_reset(&mut self, pass: usize, subject: &str) {
        self.resets.push((pass, subject.to_string()));
    }
}

impl StepLog {
    /// Mean loss of each pass of `phase`.
    pub fn pass_losses(&self, phase: Phase) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in self.steps.iter().filter(|r| r.phase == phase) {
            if sums.len() < r.pass {
                sums.resize(r.pass, (0.0, 0));
            }
            sums[r.pass - 1].0 += r.loss;
            sums[r.pass - 1].1 += 1;
        }
        sums.iter().map(|&(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Mixes a purpose tag into the plan seed so each random stream differs.
pub(crate) fn derive_seed(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(purpose)
}

/// Oversamples the training subjects once (seeded from the plan) and
/// pre-trains copies of the CNN branches on the balanced set.
pub fn pretrain_subjects(
    model: &DeepSleepNet,
    subjects: &[SubjectRecording],
    plan: &TrainPlan,
    observer: &mut dyn TrainObserver,
) -> Result<PretrainOutcome> {
    use rand::SeedableRng;
    plan.validate()?;
    let epochs: Vec<_> = subjects.iter().flat_map(|s| &s.epochs).collect();
    let stages: Vec<_> = epochs.iter().map(|e| e.stage).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 1));
    let balanced: Vec<_> = balance::balanced_indices(&stages, &mut rng)?
        .into_iter()
        .map(|i| epochs[i])
        .collect();
    pretrain(model, &balanced, plan, observer)
}

/// Pre-trains the CNNs on the oversampled subjects, then fine-tunes `model`
/// in place.
pub fn train_two_step(
    model: &mut DeepSleepNet,
    subjects: &[SubjectRecording],
    plan: &TrainPlan,
    observer: &mut dyn TrainObserver,
) -> Result<FinetuneOutcome> {
    let pre = pretrain_subjects(model, subjects, plan, observer)?;
    finetune(model, &pre.cnn, subjects, plan, observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_valid() {
        TrainPlan::default().validate().unwrap();
        let bad = TrainPlan { lr1: 1e-3, ..TrainPlan::default() };
        assert!(bad.validate().is_err());
        let frozen = TrainPlan { lr1: 0.0, ..TrainPlan::default() };
        frozen.validate().unwrap();
        assert!(TrainPlan { seq_len: 0, ..TrainPlan::default() }.validate().is_err());
    }

    #[test]
    fn step_record_line() {
        let r = StepRecord {
            phase: Phase::Finetune,
            pass: 2,
            step: 7,
            loss: 0.5,
            grad_norm: 12.0,
            lr_cnn: 1e-6,
            lr_sequence: 1e-4,
        };
        assert_eq!(r.to_string(), "finetune,2,7,0.5,12,0.000001,0.0001");
        assert_eq!(StepRecord::HEADER.split(',').count(), r.to_string().split(',').count());
    }
}
