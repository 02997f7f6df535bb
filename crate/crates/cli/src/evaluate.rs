use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use anyhow::{bail, Context, Result};
use deepsleep::checkpoint::save_model;
use deepsleep::checkpoint::Provenance;
use deepsleep::data::prepare::subject_group;
use deepsleep::eval::{run_cv, ConfusionMatrix, CvOptions, MetricsReport, Progress};
use deepsleep::train::StepRecord;
use deepsleep::SubjectRecording;
use serde::Serialize;

use crate::config::RunConfig;
use crate::prepare::load_subjects;
use crate::train::load_model;

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    train: Vec<String>,
    test: Vec<String>,
    /// Diagnostics only; the headline metrics pool all folds first.
    report: Option<MetricsReport>,
    finetune_losses: Vec<f64>,
}

#[derive(Serialize)]
struct EvaluationDocument {
    mode: &'static str,
    subjects: Vec<String>,
    report: MetricsReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    folds: Vec<FoldSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<Provenance>,
}

pub struct EvaluateArgs {
    pub checkpoint: Option<PathBuf>,
    pub subjects: Option<Vec<String>>,
    pub allow_train_overlap: bool,
    pub save_fold_models: bool,
}

fn write_outputs(dir: &Path, doc: &EvaluationDocument) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(doc)?)?;
    std::fs::write(dir.join("metrics.txt"), doc.report.to_string())?;
    std::fs::write(dir.join("confusion.csv"), doc.report.confusion_csv())?;
    print!("{}", doc.report);
    if doc.report.degenerate() {
        println!("(* marks a class with a zero denominator; its value is reported as 0)");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn select(all: &[SubjectRecording], ids: &[String]) -> Result<Vec<SubjectRecording>> {
    ids.iter()
        .map(|id| {
            all.iter()
                .find(|s| &s.subject_id == id)
                .cloned()
                .with_context(|| format!("subject {id} is not in the epoch cache"))
        })
        .collect()
}

pub fn run(config: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let all = load_subjects(config)?;
    let dir = config.output_dir.join("evaluate");
    match &args.checkpoint {
        Some(path) => score_checkpoint(config, args, &all, path, &dir),
        None => cross_validate(config, args, &all, &dir),
    }
}

fn score_checkpoint(
    config: &RunConfig,
    args: &EvaluateArgs,
    all: &[SubjectRecording],
    path: &Path,
    dir: &Path,
) -> Result<()> {
    let (model, provenance) = load_model(config, Some(path))?;
    let trained = &provenance.training_subjects;
    let subjects = match &args.subjects {
        Some(ids) => select(all, ids)?,
        None => all.iter().filter(|s| !trained.contains(&s.subject_id)).cloned().collect(),
    };
    if subjects.is_empty() {
        bail!("no held-out subjects to evaluate: every prepared subject was used for training");
    }
    let overlap: Vec<&str> = subjects
        .iter()
        .map(|s| s.subject_id.as_str())
        .filter(|id| trained.iter().any(|t| t == id))
        .collect();
    if !overlap.is_empty() && !args.allow_train_overlap {
        bail!(
            "refusing to score subjects the checkpoint was trained on ({}); pass --allow-train-overlap to do it anyway",
            overlap.join(", ")
        );
    }
    let mut cm = ConfusionMatrix::default();
    for s in &subjects {
        for (p, e) in model.predict(s)?.iter().zip(&s.epochs) {
            cm.add(e.stage, p.stage);
        }
    }
    let doc = EvaluationDocument {
        mode: "checkpoint",
        subjects: subjects.iter().map(|s| s.subject_id.clone()).collect(),
        report: MetricsReport::new(&cm)?,
        folds: Vec::new(),
        checkpoint: Some(provenance),
    };
    write_outputs(dir, &doc)
}

fn cross_validate(config: &RunConfig, args: &EvaluateArgs, all: &[SubjectRecording], dir: &Path) -> Result<()> {
    let subjects = match &args.subjects {
        Some(ids) => select(all, ids)?,
        None => all.to_vec(),
    };
    let fs = subjects[0].fs;
    let model_config = config.model_config(fs)?;
    let groups = config
        .group_nights
        .then(|| subjects.iter().map(|s| subject_group(&s.subject_id)).collect());
    std::fs::create_dir_all(dir)?;

    let (tx, rx) = mpsc::channel();
    let log_path = dir.join("cv_log.csv");
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "fold,{}", StepRecord::HEADER)?;
    let writer = std::thread::spawn(move || -> std::io::Result<()> {
        for msg in rx {
            match msg {
                Progress::Step { fold, record } => writeln!(log, "{fold},{record}")?,
                Progress::FoldDone { fold } => eprintln!("evaluate: fold {fold} done"),
            }
        }
        log.flush()
    });

    let models_dir = dir.join("folds");
    if args.save_fold_models {
        std::fs::create_dir_all(&models_dir)?;
    }
    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let save = |fold: &deepsleep::data::Fold, model: &deepsleep::DeepSleepNet| {
        if !args.save_fold_models {
            return Ok(());
        }
        let provenance = Provenance {
            seed: config.seed,
            pass: config.plan.n_finetune_epochs,
            step: 0,
            phase: "finetune".into(),
            training_subjects: fold.train.iter().map(|&i| ids[i].clone()).collect(),
        };
        save_model(&models_dir.join(format!("fold_{}.ckpt", fold.index)), model, &provenance)
    };
    let options = CvOptions { k: config.k, jobs: config.jobs, groups };
    let outcome = run_cv(&subjects, &model_config, &config.plan, &options, Some(tx), &save);
    writer.join().expect("log writer panicked")?;
    let outcome = outcome?;

    let folds = outcome
        .folds
        .iter()
        .map(|f| FoldSummary {
            fold: f.fold.index,
            train: f.fold.train.iter().map(|&i| ids[i].clone()).collect(),
            test: f.fold.test.iter().map(|&i| ids[i].clone()).collect(),
            report: MetricsReport::new(&f.confusion).ok(),
            finetune_losses: f.finetune_losses.clone(),
        })
        .collect();
    let doc = EvaluationDocument {
        mode: "cross-validation",
        subjects: ids.clone(),
        report: outcome.report,
        folds,
        checkpoint: None,
    };
    write_outputs(dir, &doc)
}
