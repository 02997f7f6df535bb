//! Behaviour of the two training phases on the miniature network.

mod common;

use deepsleep::data::balance::oversample;
use deepsleep::model::CNN_PREFIX;
use deepsleep::nn::ParamKind;
use deepsleep::train::{
    finetune, pretrain, pretrain_subjects, train_two_step, Phase, StepLog, PRETRAIN_HEAD,
};
use deepsleep::{DeepSleepNet, EpochRecord, Stage, TrainPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_plan() -> TrainPlan {
    TrainPlan {
        n_pretrain_epochs: 2,
        n_finetune_epochs: 2,
        pretrain_batch: 16,
        finetune_batch: 2,
        seq_len: 4,
        lr_pretrain: 1e-3,
        lr1: 1e-5,
        lr2: 1e-3,
        ..TrainPlan::default()
    }
}

fn balanced_fifty() -> Vec<EpochRecord> {
    let subjects = common::tiny_subjects(4, 150, 11);
    let mut out = Vec::new();
    for stage in Stage::ALL {
        out.extend(
            subjects
                .iter()
                .flat_map(|s| &s.epochs)
                .filter(|e| e.stage == stage)
                .take(10)
                .cloned(),
        );
    }
    assert_eq!(out.len(), 50);
    out
}

#[test]
fn pretraining_loss_decreases_on_a_small_balanced_set() {
    let model = DeepSleepNet::build(common::tiny_config(), 1).unwrap();
    let before = model.params.clone();
    let plan = TrainPlan {
        n_pretrain_epochs: 40,
        pretrain_batch: 10,
        lr_pretrain: 1e-2,
        ..TrainPlan::default()
    };
    let out = pretrain(&model, &balanced_fifty(), &plan, &mut ()).unwrap();
    let first = out.pass_losses[0];
    let last = *out.pass_losses.last().unwrap();
    assert!(last < 0.7 * first, "loss {first} -> {last}");
    // The model is untouched and the head never leaks into the result.
    assert_eq!(model.params, before);
    assert!(out.cnn.entries().iter().all(|e| e.name.starts_with(CNN_PREFIX)));
    assert!(out.cnn.entries().iter().all(|e| !e.name.starts_with(PRETRAIN_HEAD)));
}

#[test]
fn pretraining_rejects_unbalanced_input() {
    let model = DeepSleepNet::build(common::tiny_config(), 1).unwrap();
    let mut set = balanced_fifty();
    set.pop();
    assert!(pretrain(&model, &set, &quick_plan(), &mut ()).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fixed = oversample(&set, &mut rng).unwrap();
    assert!(pretrain(&model, &fixed, &quick_plan(), &mut ()).is_ok());
}

#[test]
fn training_is_deterministic_per_seed() {
    let subjects = common::tiny_subjects(2, 30, 2);
    let run = |seed: u64| {
        let mut model = DeepSleepNet::build(common::tiny_config(), 5).unwrap();
        let plan = TrainPlan { seed, ..quick_plan() };
        let mut log = StepLog::default();
        train_two_step(&mut model, &subjects, &plan, &mut log).unwrap();
        (model.params, log.steps)
    };
    let (a, log_a) = run(7);
    let (b, log_b) = run(7);
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let (c, _) = run(8);
    assert_ne!(a, c);
}

#[test]
fn zero_cnn_rate_freezes_the_cnn_weights() {
    let subjects = common::tiny_subjects(2, 30, 3);
    let mut model = DeepSleepNet::build(common::tiny_config(), 5).unwrap();
    let plan = TrainPlan { lr1: 0.0, ..quick_plan() };
    let pre = pretrain_subjects(&model, &subjects, &plan, &mut ()).unwrap();
    let before_seq = model.params.by_name("output.weights").cloned();
    finetune(&mut model, &pre.cnn, &subjects, &plan, &mut ()).unwrap();
    for e in pre.cnn.entries().iter().filter(|e| e.kind == ParamKind::Weight) {
        assert_eq!(model.params.by_name(&e.name), Some(&e.value), "{} moved", e.name);
    }
    assert_ne!(model.params.by_name("output.weights").cloned(), before_seq);
}

#[test]
fn state_resets_once_per_subject_per_pass() {
    let subjects = common::tiny_subjects(3, 25, 4);
    let mut model = DeepSleepNet::build(common::tiny_config(), 5).unwrap();
    let plan = quick_plan();
    let mut log = StepLog::default();
    let pre = pretrain_subjects(&model, &subjects, &plan, &mut log).unwrap();
    assert!(log.resets.is_empty());
    finetune(&mut model, &pre.cnn, &subjects, &plan, &mut log).unwrap();
    let expected: Vec<(usize, String)> = (1..=plan.n_finetune_epochs)
        .flat_map(|pass| subjects.iter().map(move |s| (pass, s.subject_id.clone())))
        .collect();
    assert_eq!(log.resets, expected);
    assert_eq!(log.pass_losses(Phase::Pretrain).len(), plan.n_pretrain_epochs);
    assert_eq!(log.pass_losses(Phase::Finetune).len(), plan.n_finetune_epochs);
    assert!(model.params.entries().iter().all(|e| !e.name.starts_with(PRETRAIN_HEAD)));
}

#[test]
fn finetune_rejects_a_foreign_cnn() {
    let subjects = common::tiny_subjects(1, 20, 4);
    let mut model = DeepSleepNet::build(common::tiny_config(), 5).unwrap();
    let mut other_config = common::tiny_config();
    other_config.small.conv1_filters = 3;
    let other = DeepSleepNet::build(other_config, 5).unwrap();
    let cnn = other.params.subset(CNN_PREFIX);
    assert!(finetune(&mut model, &cnn, &subjects, &quick_plan(), &mut ()).is_err());
}
