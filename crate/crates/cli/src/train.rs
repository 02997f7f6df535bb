use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use deepsleep::checkpoint::{encode, save_model, Checkpoint, Provenance, Scope};
use deepsleep::train::{finetune, pretrain_subjects, StepRecord, TrainObserver};
use deepsleep::{DeepSleepNet, SubjectRecording};

use crate::config::RunConfig;
use crate::prepare::load_subjects;

/// Writes every step to a CSV file and a per-pass summary to stderr.
pub struct StepCsv {
    out: BufWriter<File>,
    current: Option<(deepsleep::train::Phase, usize)>,
    sum: f64,
    steps: usize,
    error: Option<std::io::Error>,
}

impl StepCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        writeln!(out, "{}", StepRecord::HEADER)?;
        Ok(StepCsv { out, current: None, sum: 0.0, steps: 0, error: None })
    }

    fn summarize(&mut self) {
        if let Some((phase, pass)) = self.current {
            eprintln!("{phase} pass {pass}: mean loss {:.4} over {} steps", self.sum / self.steps.max(1) as f64, self.steps);
        }
    }

    pub fn finish(mut self) -> Result<()> {
        self.summarize();
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(())
    }
}

impl TrainObserver for StepCsv {
    fn on_step(&mut self, r: &StepRecord) {
        if self.current != Some((r.phase, r.pass)) {
            self.summarize();
            self.current = Some((r.phase, r.pass));
            self.sum = 0.0;
            self.steps = 0;
        }
        self.sum += r.loss;
        self.steps += 1;
        if let Err(e) = writeln!(self.out, "{r}") {
            self.error.get_or_insert(e);
        }
    }
}

/// The configured training subjects, in cache order.
pub fn training_subjects(config: &RunConfig, all: &[SubjectRecording]) -> Result<Vec<SubjectRecording>> {
    let Some(ids) = &config.train_subjects else {
        return Ok(all.to_vec());
    };
    if let Some(missing) = ids.iter().find(|id| !all.iter().any(|s| &s.subject_id == *id)) {
        bail!("training subject {missing} is not in the epoch cache");
    }
    Ok(all.iter().filter(|s| ids.contains(&s.subject_id)).cloned().collect())
}

fn ids(subjects: &[SubjectRecording]) -> Vec<String> {
    subjects.iter().map(|s| s.subject_id.clone()).collect()
}

pub fn run_pretrain(config: &RunConfig) -> Result<()> {
    let all = load_subjects(config)?;
    let train = training_subjects(config, &all)?;
    let fs = train[0].fs;
    let model = DeepSleepNet::build(config.model_config(fs)?, config.seed)?;
    let mut log = StepCsv::create(&config.output_dir.join("pretrain_log.csv"))?;
    let out = pretrain_subjects(&model, &train, &config.plan, &mut log)?;
    let steps = log.steps;
    log.finish()?;
    let provenance = Provenance {
        seed: config.seed,
        pass: config.plan.n_pretrain_epochs,
        step: steps,
        phase: "pretrain".into(),
        training_subjects: ids(&train),
    };
    let bytes = encode(Scope::CnnOnly, &model.config, &provenance, &out.cnn)?;
    std::fs::write(config.pretrained_path(), bytes)?;
    println!(
        "pre-trained CNNs on {} subjects; final loss {:.4}; wrote {}",
        train.len(),
        out.pass_losses.last().copied().unwrap_or(f64::NAN),
        config.pretrained_path().display()
    );
    Ok(())
}

pub fn run_finetune(config: &RunConfig) -> Result<()> {
    let path = config.pretrained_path();
    if !path.exists() {
        bail!(
            "missing prerequisite: pre-trained CNN checkpoint {} (run `deepsleep pretrain` first)",
            path.display()
        );
    }
    let ck = Checkpoint::read(&path)?;
    if ck.scope != Scope::CnnOnly {
        bail!("{} is not a pre-training checkpoint", path.display());
    }
    let all = load_subjects(config)?;
    let train = training_subjects(config, &all)?;
    if ck.provenance.training_subjects != ids(&train) {
        bail!(
            "the CNNs in {} were pre-trained on different subjects than the configured training set; rerun pretrain",
            path.display()
        );
    }
    if ck.config != config.model_config(train[0].fs)? {
        bail!("the model settings changed since pre-training; rerun pretrain");
    }
    let mut model = DeepSleepNet::build(ck.config.clone(), config.seed)?;
    let cnn = ck.into_cnn()?;
    let mut log = StepCsv::create(&config.output_dir.join("finetune_log.csv"))?;
    let out = finetune(&mut model, &cnn, &train, &config.plan, &mut log)?;
    let steps = log.steps;
    log.finish()?;
    let provenance = Provenance {
        seed: config.seed,
        pass: config.plan.n_finetune_epochs,
        step: steps,
        phase: "finetune".into(),
        training_subjects: ids(&train),
    };
    save_model(&config.model_path(), &model, &provenance)?;
    if out.skipped_steps > 0 {
        eprintln!("finetune: skipped {} single-epoch steps", out.skipped_steps);
    }
    println!(
        "fine-tuned on {} subjects; final loss {:.4}; wrote {}",
        train.len(),
        out.pass_losses.last().copied().unwrap_or(f64::NAN),
        config.model_path().display()
    );
    Ok(())
}

/// Loads the fine-tuned model, naming the missing prerequisite if needed.
pub fn load_model(config: &RunConfig, path: Option<&Path>) -> Result<(DeepSleepNet, Provenance)> {
    let default = config.model_path();
    let path = path.unwrap_or(&default);
    if !path.exists() {
        bail!(
            "missing prerequisite: model checkpoint {} (run `deepsleep finetune` first)",
            path.display()
        );
    }
    let ck = Checkpoint::read(path)?;
    let provenance = ck.provenance.clone();
    Ok((ck.into_model()?, provenance))
}
