use std::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{l2_penalty, AdamState};
use super::{derive_seed, Phase, StepRecord, TrainObserver, TrainPlan};
use crate::data::{stage_counts, EpochRecord, Stage};
use crate::error::{Error, Result};
use crate::model::{epochs_tensor, DeepSleepNet, CNN_PREFIX};
use crate::nn::{dropout, Binder, Linear, ParamStore, Session};

/// Name prefix of the temporary softmax layer stacked on the CNNs.
pub const PRETRAIN_HEAD: &str = "pretrain_head";

pub struct PretrainOutcome {
    /// Trained CNN entries only (weights and batch-norm statistics); the
    /// temporary head is not included.
    pub cnn: ParamStore,
    /// Mean loss of every pass.
    pub pass_losses: Vec<f64>,
}

/// Contiguous batch boundaries of `n` items; a trailing batch of a single
/// item is merged into its predecessor (batch norm needs two rows).
fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Trains the two CNN branches of `model`, stacked with a temporary softmax
/// layer, on a class-balanced epoch set. `model` itself is not modified.
pub fn pretrain<E: Borrow<EpochRecord>>(
    model: &DeepSleepNet,
    balanced: &[E],
    plan: &TrainPlan,
    observer: &mut dyn TrainObserver,
) -> Result<PretrainOutcome> {
    plan.validate()?;
    let counts = stage_counts(balanced.iter().map(|e| e.borrow().stage));
    if counts[0] == 0 || counts.iter().any(|&c| c != counts[0]) {
        let desc: Vec<String> = Stage::ALL
            .iter()
            .map(|s| format!("{s}={}", counts[s.index()]))
            .collect();
        return Err(Error::Data(format!(
            "pre-training needs a class-balanced set, got {}",
            desc.join(" ")
        )));
    }

    // CNN entries come first in the model store, so the branch ids stay
    // valid against the extracted subset.
    let mut cnn = model.params.subset(CNN_PREFIX);
    let aligned = cnn
        .entries()
        .iter()
        .zip(model.params.entries())
        .all(|(a, b)| a.name == b.name);
    if !aligned {
        return Err(Error::invalid("pretrain", "CNN parameters are not a prefix of the model store"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 2));
    let mut head_store = ParamStore::new();
    let head = Linear::new(
        &mut head_store,
        &mut rng,
        PRETRAIN_HEAD,
        model.feature_width(),
        model.config.n_classes,
    );
    let mut adam_cnn = AdamState::new(&cnn);
    let mut adam_head = AdamState::new(&head_store);
    let len = model.config.epoch_len();
    let mut order: Vec<usize> = (0..balanced.len()).collect();
    let mut pass_losses = Vec::with_capacity(plan.n_pretrain_epochs);

    for pass in 1..=plan.n_pretrain_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let ranges = batch_ranges(order.len(), plan.pretrain_batch);
        for (step, range) in ranges.iter().enumerate() {
            let batch: Vec<&EpochRecord> = order[range.clone()].iter().map(|&i| balanced[i].borrow()).collect();
            let targets: Vec<usize> = batch.iter().map(|e| e.stage.index()).collect();
            let x = epochs_tensor(&batch, len)?;

            let mut s = Session::train(&mut rng);
            let mut p = Binder::new(&cnn, true);
            let mut ph = Binder::new(&head_store, true);
            let xv = s.graph.constant(x);
            let a = model.featurize(&mut s, &mut p, xv)?;
            let a = dropout(&mut s, a, model.config.dropout)?;
            let logits = head.forward(&mut s, &mut ph, a)?;
            let ce = s.graph.softmax_cross_entropy(logits, &targets)?;
            let loss = match l2_penalty(&mut s, &mut p, plan.weight_decay)? {
                Some(pen) => s.graph.add(ce, pen)?,
                None => ce,
            };
            let loss_value = s.graph.value(loss).data()[0];
            s.graph.backward(loss)?;
            let grads = p.gradients(&s.graph);
            let head_grads = ph.gradients(&s.graph);
            let grad_norm = (grads.global_norm().powi(2) + head_grads.global_norm().powi(2)).sqrt();
            let updates = p.into_updates();
            drop(ph);

            adam_cnn.step(&mut cnn, &grads, |_| plan.lr_pretrain)?;
            adam_head.step(&mut head_store, &head_grads, |_| plan.lr_pretrain)?;
            cnn.apply_updates(updates);

            total += loss_value;
            observer.on_step(&StepRecord {
                phase: Phase::Pretrain,
                pass,
                step: step + 1,
                loss: loss_value,
                grad_norm,
                lr_cnn: plan.lr_pretrain,
                lr_sequence: plan.lr_pretrain,
            });
        }
        pass_losses.push(total / ranges.len().max(1) as f64);
    }
    Ok(PretrainOutcome { cnn, pass_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_once() {
        let r = batch_ranges(250, 100);
        assert_eq!(r, vec![0..100, 100..200, 200..250]);
        let r = batch_ranges(201, 100);
        assert_eq!(r, vec![0..100, 100..201]);
        assert_eq!(batch_ranges(1, 100), vec![0..1]);
    }
}
