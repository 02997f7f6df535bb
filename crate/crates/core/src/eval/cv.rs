use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::data::{split_folds, split_grouped_folds, Fold, SubjectRecording};
use crate::error::{Error, Result};
use crate::model::{DeepSleepNet, ModelConfig, Prediction};
use crate::train::{derive_seed, train_two_step, StepRecord, TrainObserver, TrainPlan};

use super::metrics::{ConfusionMatrix, MetricsReport};

/// Predictions for one test subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectPredictions {
    pub subject_id: String,
    pub predictions: Vec<Prediction>,
}

impl SubjectPredictions {
    pub fn confusion(&self, subject: &SubjectRecording) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for (p, e) in self.predictions.iter().zip(&subject.epochs) {
            cm.add(e.stage, p.stage);
        }
        cm
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: Fold,
    pub test: Vec<SubjectPredictions>,
    pub confusion: ConfusionMatrix,
    /// Mean fine-tuning loss of every pass.
    pub finetune_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    /// Sorted by fold index.
    pub folds: Vec<FoldResult>,
    /// Confusion of all test predictions pooled across folds.
    pub pooled: ConfusionMatrix,
    pub report: MetricsReport,
}

/// A progress message from a fold worker.
#[derive(Clone, Debug)]
pub enum Progress {
    Step { fold: usize, record: StepRecord },
    FoldDone { fold: usize },
}

#[derive(Clone, Debug)]
pub struct CvOptions {
    pub k: usize,
    /// Folds trained concurrently (at least 1).
    pub jobs: usize,
    /// One label per recording; recordings sharing a label are kept in the
    /// same fold. `None` treats every recording as its own subject.
    pub groups: Option<Vec<String>>,
}

struct Forward {
    fold: usize,
    tx: Option<mpsc::Sender<Progress>>,
}

impl TrainObserver for Forward {
    fn on_step(&mut self, record: &StepRecord) {
        if let Some(tx) = &self.tx {
            // A closed receiver only means nobody is listening.
            let _ = tx.send(Progress::Step {
                fold: self.fold,
                record: record.clone(),
            });
        }
    }
}

fn run_fold(
    fold: &Fold,
    subjects: &[SubjectRecording],
    config: &ModelConfig,
    plan: &TrainPlan,
    progress: Option<mpsc::Sender<Progress>>,
    on_model: &(dyn Fn(&Fold, &DeepSleepNet) -> Result<()> + Sync),
) -> Result<FoldResult> {
    let train: Vec<SubjectRecording> = fold.train.iter().map(|&i| subjects[i].clone()).collect();
    let fold_plan = TrainPlan {
        seed: derive_seed(plan.seed, 100 + fold.index as u64),
        ..plan.clone()
    };
    let mut model = DeepSleepNet::build(config.clone(), fold_plan.seed)?;
    let mut observer = Forward {
        fold: fold.index,
        tx: progress.clone(),
    };
    let outcome = train_two_step(&mut model, &train, &fold_plan, &mut observer)?;
    on_model(fold, &model)?;
    let mut confusion = ConfusionMatrix::default();
    let mut test = Vec::with_capacity(fold.test.len());
    for &i in &fold.test {
        let preds = SubjectPredictions {
            subject_id: subjects[i].subject_id.clone(),
            predictions: model.predict(&subjects[i])?,
        };
        confusion.merge(&preds.confusion(&subjects[i]));
        test.push(preds);
    }
    if let Some(tx) = progress {
        let _ = tx.send(Progress::FoldDone { fold: fold.index });
    }
    Ok(FoldResult {
        fold: fold.clone(),
        test,
        confusion,
        finetune_losses: outcome.pass_losses,
    })
}

/// Subject-wise k-fold cross-validation: each fold trains a fresh model on
/// its training subjects and predicts its test subjects; the metrics are
/// computed once over all pooled test predictions.
///
/// Up to `options.jobs` folds train concurrently on scoped worker threads.
/// `on_model` sees every trained model (e.g. to save a checkpoint) and
/// `progress` receives step records as they happen.
pub fn run_cv(
    subjects: &[SubjectRecording],
    config: &ModelConfig,
    plan: &TrainPlan,
    options: &CvOptions,
    progress: Option<mpsc::Sender<Progress>>,
    on_model: &(dyn Fn(&Fold, &DeepSleepNet) -> Result<()> + Sync),
) -> Result<CvOutcome> {
    plan.validate()?;
    let folds = match &options.groups {
        None => split_folds(subjects.len(), options.k)?,
        Some(g) if g.len() == subjects.len() => split_grouped_folds(g, options.k)?,
        Some(g) => {
            return Err(Error::invalid(
                "run_cv",
                format!("{} group labels for {} recordings", g.len(), subjects.len()),
            ))
        }
    };
    let jobs = options.jobs.clamp(1, folds.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<FoldResult>)>();

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let progress = progress.clone();
            let (next, folds) = (&next, &folds);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(fold) = folds.get(i) else { break };
                let result = run_fold(fold, subjects, config, plan, progress.clone(), on_model);
                let failed = result.is_err();
                let _ = tx.send((i, result));
                if failed {
                    // Stop handing out further folds.
                    next.store(folds.len(), Ordering::Relaxed);
                }
            });
        }
    });
    drop(tx);

    let mut results: Vec<(usize, Result<FoldResult>)> = rx.into_iter().collect();
    results.sort_by_key(|(i, _)| *i);
    let mut done = Vec::with_capacity(folds.len());
    for (i, r) in results {
        done.push(r.map_err(|e| Error::Fold {
            fold: i,
            source: Box::new(e),
        })?);
    }
    if done.len() != folds.len() {
        return Err(Error::Data(format!(
            "only {} of {} folds completed",
            done.len(),
            folds.len()
        )));
    }
    let mut pooled = ConfusionMatrix::default();
    for f in &done {
        pooled.merge(&f.confusion);
    }
    let report = MetricsReport::new(&pooled)?;
    Ok(CvOutcome {
        folds: done,
        pooled,
        report,
    })
}
