//! `predict`, `analyze` and `hypnogram`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepsleep::data::Stage;
use deepsleep::eval::{cell_trace, filter_activations, FilterActivationMap};
use deepsleep::hypnogram::{parse_stages, render_svg, render_text, SvgStyle};
use deepsleep::SubjectRecording;

use crate::config::RunConfig;
use crate::evaluate::select;
use crate::prepare::load_subjects;
use crate::train::load_model;

fn chosen(all: &[SubjectRecording], ids: &Option<Vec<String>>, default: Vec<SubjectRecording>) -> Result<Vec<SubjectRecording>> {
    match ids {
        Some(ids) => select(all, ids),
        None => Ok(default),
    }
}

/// Writes `epoch_index,stage,probW,probN1,probN2,probN3,probREM` lines (one
/// per epoch, no header), a text hypnogram and an SVG hypnogram per subject.
pub fn run_predict(config: &RunConfig, checkpoint: Option<&Path>, subjects: &Option<Vec<String>>) -> Result<()> {
    let (model, _) = load_model(config, checkpoint)?;
    let all = load_subjects(config)?;
    let subjects = chosen(&all, subjects, all.clone())?;
    let dir = config.output_dir.join("predict");
    std::fs::create_dir_all(&dir)?;
    for s in &subjects {
        let preds = model.predict(s)?;
        let mut csv = String::new();
        for p in &preds {
            write!(csv, "{},{}", p.epoch_index, p.stage).unwrap();
            for v in &p.probs {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
        }
        std::fs::write(dir.join(format!("{}.csv", s.subject_id)), csv)?;
        let stages: Vec<Stage> = preds.iter().map(|p| p.stage).collect();
        std::fs::write(dir.join(format!("{}.txt", s.subject_id)), render_text(&stages) + "\n")?;
        let points: Vec<(usize, Stage)> = preds.iter().map(|p| (p.epoch_index, p.stage)).collect();
        let style = SvgStyle { title: Some(s.subject_id.clone()), ..SvgStyle::default() };
        std::fs::write(dir.join(format!("{}.svg", s.subject_id)), render_svg(&points, &style)?)?;
        let correct = preds.iter().zip(&s.epochs).filter(|(p, e)| p.stage == e.stage).count();
        println!(
            "{}: {} epochs, agreement with the scored hypnogram {:.1}%",
            s.subject_id,
            preds.len(),
            100.0 * correct as f64 / preds.len() as f64
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn map_csv(map: &FilterActivationMap) -> String {
    let k = map.u.first().map_or(0, Vec::len);
    let mut out = String::from("stage");
    for f in 0..k {
        write!(out, ",f{f}").unwrap();
    }
    out.push('\n');
    for (stage, row) in Stage::ALL.iter().zip(&map.u) {
        out.push_str(stage.name());
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Filter activation maps of both branches over the chosen subjects and
/// LSTM cell traces per subject.
pub fn run_analyze(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    subjects: &Option<Vec<String>>,
    cells: &[usize],
) -> Result<()> {
    let (model, provenance) = load_model(config, checkpoint)?;
    let all = load_subjects(config)?;
    let held_out: Vec<SubjectRecording> = all
        .iter()
        .filter(|s| !provenance.training_subjects.contains(&s.subject_id))
        .cloned()
        .collect();
    let default = if held_out.is_empty() { all.clone() } else { held_out };
    let subjects = chosen(&all, subjects, default)?;
    let dir = config.output_dir.join("analyze");
    std::fs::create_dir_all(&dir)?;

    let mut epochs = Vec::new();
    let mut predicted = Vec::new();
    for s in &subjects {
        let trace = cell_trace(&model, s, cells)?;
        let mut csv = String::from("epoch_index,predicted");
        for c in cells {
            write!(csv, ",cell{c}").unwrap();
        }
        csv.push('\n');
        for ((i, stage), row) in trace.epoch_index.iter().zip(&trace.predicted).zip(&trace.values) {
            write!(csv, "{i},{stage}").unwrap();
            for v in row {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
        }
        std::fs::write(dir.join(format!("cells_{}.csv", s.subject_id)), csv)?;
        epochs.extend(s.epochs.iter().cloned());
        predicted.extend(trace.predicted);
    }
    let maps = filter_activations(&model, &epochs, &predicted)?;
    for map in &maps {
        let name = serde_json::to_value(map.branch)?.as_str().unwrap_or("branch").to_string();
        std::fs::write(dir.join(format!("filters_{name}.csv")), map_csv(map))?;
        if !map.empty_stages.is_empty() {
            eprintln!(
                "analyze: no epochs predicted as {:?}; their {name} rows are zero",
                map.empty_stages
            );
        }
    }
    let doc = serde_json::json!({
        "subjects": subjects.iter().map(|s| &s.subject_id).collect::<Vec<_>>(),
        "maps": maps.iter().map(|m| serde_json::json!({
            "branch": m.branch,
            "u": m.u,
            "empty_stages": m.empty_stages,
            "grouped_order": m.grouped_order(),
        })).collect::<Vec<_>>(),
        "cells": cells,
    });
    std::fs::write(dir.join("analysis.json"), serde_json::to_string_pretty(&doc)?)?;
    println!(
        "analysed {} epochs from {} subjects: two {}x{} filter maps; wrote {}",
        epochs.len(),
        subjects.len(),
        Stage::COUNT,
        maps[0].u[0].len(),
        dir.display()
    );
    Ok(())
}

/// Reads a stage sequence: either `predict` CSV lines (epoch index, stage,
/// ...) or free text of stage tokens.
fn read_sequence(text: &str) -> Result<Vec<(usize, Stage)>> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let looks_like_csv = rows.iter().all(|l| {
        let mut f = l.split(',');
        f.next().is_some_and(|i| i.trim().parse::<usize>().is_ok()) && f.next().is_some()
    });
    if !rows.is_empty() && looks_like_csv {
        rows.iter()
            .map(|l| {
                let mut f = l.split(',');
                let i = f.next().unwrap().trim().parse::<usize>()?;
                let s = f.next().unwrap().parse::<Stage>()?;
                Ok((i, s))
            })
            .collect()
    } else {
        Ok(parse_stages(text)?.into_iter().enumerate().collect())
    }
}

pub fn run_hypnogram(input: &Path, svg: Option<&PathBuf>, title: Option<String>) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let seq = read_sequence(&text).with_context(|| format!("{}", input.display()))?;
    if seq.is_empty() {
        bail!("{} holds no stages", input.display());
    }
    let stages: Vec<Stage> = seq.iter().map(|e| e.1).collect();
    println!("{}", render_text(&stages));
    if let Some(path) = svg {
        let style = SvgStyle { title, ..SvgStyle::default() };
        std::fs::write(path, render_svg(&seq, &style)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_from_csv_or_tokens() {
        let csv = "0,W,1,0,0,0,0\n1,N1,0,1,0,0,0\n5,REM,0,0,0,0,1\n";
        assert_eq!(read_sequence(csv).unwrap(), vec![(0, Stage::W), (1, Stage::N1), (5, Stage::Rem)]);
        assert_eq!(read_sequence("W N2\nN3").unwrap(), vec![(0, Stage::W), (1, Stage::N2), (2, Stage::N3)]);
        assert!(read_sequence("W X").is_err());
    }
}
