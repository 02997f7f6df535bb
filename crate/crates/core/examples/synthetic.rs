//! Trains a full-size network on three generated recordings and scores a
//! fourth one it never saw. Takes a couple of minutes on one core.
//!
//! cargo run --release -p deepsleep --example synthetic

use deepsleep::data::synthetic::{synthetic_subjects, SyntheticConfig};
use deepsleep::train::{train_two_step, Phase, StepLog};
use deepsleep::{DeepSleepNet, ModelConfig, TrainPlan};

fn main() -> deepsleep::Result<()> {
    let subjects = synthetic_subjects(&SyntheticConfig::default(), 4, 7);
    let mut model = DeepSleepNet::build(ModelConfig::for_sampling_rate(100)?, 1)?;
    let plan = TrainPlan { n_pretrain_epochs: 5, n_finetune_epochs: 10, ..TrainPlan::default() };
    let mut log = StepLog::default();
    train_two_step(&mut model, &subjects[..3], &plan, &mut log)?;
    println!("pre-training loss per pass: {:.3?}", log.pass_losses(Phase::Pretrain));
    println!("fine-tuning loss per pass:  {:.3?}", log.pass_losses(Phase::Finetune));
    for s in &subjects {
        let correct = model.predict(s)?.iter().zip(&s.epochs).filter(|(p, e)| p.stage == e.stage).count();
        let role = if s.subject_id == subjects[3].subject_id { "held out" } else { "training" };
        println!("{} ({role}): {:.1}% correct", s.subject_id, 100.0 * correct as f64 / s.len() as f64);
    }
    Ok(())
}
