use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_global_norm, l2_penalty, learning_rates, param_groups, AdamState};
use super::{derive_seed, Phase, StepRecord, TrainObserver, TrainPlan};
use crate::data::{arrange_sequences, EpochRecord, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::{epochs_tensor, DeepSleepNet, CNN_PREFIX};
use crate::nn::{Binder, LaneLayout, ParamStore, Session};

#[derive(Clone, Debug, Default)]
pub struct FinetuneOutcome {
    /// Mean loss of every pass.
    pub pass_losses: Vec<f64>,
    /// Steps skipped because they held fewer than two epochs.
    pub skipped_steps: usize,
}

/// Overwrites every CNN entry of `model` with the entry of the same name
/// from `cnn`. Both sides must hold exactly the same CNN names and shapes.
pub fn replace_cnns(model: &mut DeepSleepNet, cnn: &ParamStore) -> Result<()> {
    let expected: Vec<&str> = model
        .params
        .entries()
        .iter()
        .map(|e| e.name.as_str())
        .filter(|n| n.starts_with(CNN_PREFIX))
        .collect();
    let given: Vec<&str> = cnn.entries().iter().map(|e| e.name.as_str()).collect();
    if let Some(extra) = given.iter().find(|n| !expected.contains(n)) {
        return Err(Error::Checkpoint(format!(
            "pre-trained parameter {extra} has no counterpart in the model"
        )));
    }
    if let Some(missing) = expected.iter().find(|n| !given.contains(n)) {
        return Err(Error::Checkpoint(format!(
            "pre-trained parameters lack {missing}"
        )));
    }
    for e in cnn.entries() {
        model.params.replace(&e.name, e.value.clone())?;
    }
    Ok(())
}

/// Fine-tunes the whole network on each subject's sequential epochs.
///
/// Per pass and subject the LSTM state starts from zero, then carries over
/// between consecutive steps of that subject. CNN weights move with `lr1`,
/// the rest with `lr2`; gradients are clipped by global norm first.
pub fn finetune(
    model: &mut DeepSleepNet,
    pretrained_cnn: &ParamStore,
    subjects: &[SubjectRecording],
    plan: &TrainPlan,
    observer: &mut dyn TrainObserver,
) -> Result<FinetuneOutcome> {
    plan.validate()?;
    replace_cnns(model, pretrained_cnn)?;
    let batches = arrange_sequences(subjects, plan.finetune_batch, plan.seq_len)?;
    let groups = param_groups(&model.params, plan.lr1, plan.lr2);
    let lr = learning_rates(&model.params, &groups);
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 3));
    let len = model.config.epoch_len();
    let mut outcome = FinetuneOutcome::default();

    for pass in 1..=plan.n_finetune_epochs {
        let mut total = 0.0;
        let mut steps = 0;
        let mut state = None;
        for batch in &batches {
            let subject = &subjects[batch.subject];
            if batch.starts_subject() {
                observer.on_state_reset(pass, &subject.subject_id);
                state = Some(model.reset_states(plan.finetune_batch));
            }
            let positions = batch.positions();
            if positions.len() < 2 {
                outcome.skipped_steps += 1;
                continue;
            }
            let epochs: Vec<&EpochRecord> = positions.iter().map(|&i| &subject.epochs[i]).collect();
            let targets: Vec<usize> = epochs.iter().map(|e| e.stage.index()).collect();
            let layout = LaneLayout::new(batch.lens())?;
            let init = state.take().expect("state is reset at the first step of a subject");

            let mut s = Session::train(&mut rng);
            let mut p = Binder::new(&model.params, true);
            let x = s.graph.constant(epochs_tensor(&epochs, len)?);
            let out = model.forward(&mut s, &mut p, x, &layout, &init)?;
            let ce = s.graph.softmax_cross_entropy(out.logits, &targets)?;
            let loss = match l2_penalty(&mut s, &mut p, plan.weight_decay)? {
                Some(pen) => s.graph.add(ce, pen)?,
                None => ce,
            };
            let loss_value = s.graph.value(loss).data()[0];
            s.graph.backward(loss)?;
            let mut grads = p.gradients(&s.graph);
            let updates = p.into_updates();
            let grad_norm = clip_global_norm(&mut grads, plan.clip_threshold);
            state = Some(out.state);
            drop(s);

            adam.step(&mut model.params, &grads, |id| lr[id.index()])?;
            model.params.apply_updates(updates);

            steps += 1;
            total += loss_value;
            observer.on_step(&StepRecord {
                phase: Phase::Finetune,
                pass,
                step: steps,
                loss: loss_value,
                grad_norm,
                lr_cnn: plan.lr1,
                lr_sequence: plan.lr2,
            });
        }
        outcome.pass_losses.push(total / steps.max(1) as f64);
    }
    Ok(outcome)
}
