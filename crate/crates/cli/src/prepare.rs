use std::io::Read;

use anyhow::{bail, Context, Result};
use deepsleep::data::cache::{read_cache, write_cache};
use deepsleep::data::edf::parse_edf;
use deepsleep::data::prepare::{discover_recordings, prepare_subject, read_hypnogram, Manifest, RecordingFiles};
use deepsleep::SubjectRecording;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Digest of the preparation settings and every input file's name and bytes.
fn input_hash(config: &RunConfig, files: &[RecordingFiles]) -> Result<String> {
    let mut h = Sha256::new();
    let settings = serde_json::json!({
        "channel": config.channel,
        "fs": config.fs,
        "standard": config.standard,
        "trim_wake": config.trim_wake,
        "cache_version": deepsleep::data::cache::CACHE_VERSION,
    });
    h.update(settings.to_string().as_bytes());
    let mut buf = vec![0u8; 1 << 20];
    for f in files {
        for path in [&f.psg, &f.hypnogram] {
            let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            let mut file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            h.update(file.metadata()?.len().to_le_bytes());
            loop {
                let n = file.read(&mut buf)?;
                if n == 0 {
                    break;
                }
                h.update(&buf[..n]);
            }
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

fn prepare_one(config: &RunConfig, f: &RecordingFiles) -> Result<SubjectRecording> {
    let bytes = std::fs::read(&f.psg).with_context(|| format!("cannot read {}", f.psg.display()))?;
    let psg = parse_edf(&bytes).with_context(|| format!("{}", f.psg.display()))?;
    let hyp = read_hypnogram(&f.hypnogram).with_context(|| format!("{}", f.hypnogram.display()))?;
    let subject = prepare_subject(&f.id, &psg, &hyp, &config.channel, config.standard, config.trim_wake)
        .with_context(|| format!("recording {}", f.id))?;
    if let Some(fs) = config.fs {
        if subject.fs != fs {
            bail!("recording {} is sampled at {} Hz, config expects {fs} Hz", f.id, subject.fs);
        }
    }
    Ok(subject)
}

pub fn run(config: &RunConfig, strict: bool) -> Result<()> {
    let files = discover_recordings(&config.data_dir)
        .with_context(|| format!("cannot list recordings in {}", config.data_dir.display()))?;
    if files.is_empty() {
        bail!("no *-PSG.edf recordings in {}", config.data_dir.display());
    }
    let hash = input_hash(config, &files)?;
    if let Ok(text) = std::fs::read_to_string(config.manifest_path()) {
        if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
            if old.input_hash == hash && config.cache_path().exists() {
                eprintln!("prepare: inputs unchanged ({} recordings), nothing to do", old.subjects.len());
                return Ok(());
            }
        }
    }

    let mut subjects = Vec::with_capacity(files.len());
    let mut failures = Vec::new();
    for f in &files {
        match prepare_one(config, f) {
            Ok(s) => {
                eprintln!("prepare: {} -> {} epochs", f.id, s.len());
                subjects.push(s);
            }
            Err(e) if !strict => {
                eprintln!("prepare: skipping {}: {e:#}", f.id);
                failures.push(f.id.clone());
            }
            Err(e) => return Err(e.context("--strict: stopping at the first bad recording")),
        }
    }
    if subjects.is_empty() {
        bail!("none of the {} recordings could be prepared", files.len());
    }
    if let Some(s) = subjects.iter().find(|s| s.fs != subjects[0].fs) {
        bail!(
            "mixed sampling rates: {} is {} Hz but {} is {} Hz; set fs in the config",
            s.subject_id,
            s.fs,
            subjects[0].subject_id,
            subjects[0].fs
        );
    }

    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(config.cache_path(), write_cache(&subjects)?)?;
    let manifest = Manifest::new(&subjects, config.channel.clone(), config.standard, hash);
    std::fs::write(config.manifest_path(), serde_json::to_string_pretty(&manifest)?)?;
    let t = &manifest.totals;
    println!(
        "prepared {} recordings: W {} N1 {} N2 {} N3 {} REM {} total {}",
        subjects.len(),
        t.w,
        t.n1,
        t.n2,
        t.n3,
        t.rem,
        t.total
    );
    if !failures.is_empty() {
        println!("{} recordings failed: {}", failures.len(), failures.join(", "));
    }
    Ok(())
}

/// All prepared subjects, in manifest order.
pub fn load_subjects(config: &RunConfig) -> Result<Vec<SubjectRecording>> {
    let path = config.cache_path();
    let bytes = std::fs::read(&path).with_context(|| {
        format!("epoch cache {} is missing; run `deepsleep prepare` first", path.display())
    })?;
    read_cache(&bytes).with_context(|| format!("corrupt epoch cache {}", path.display()))
}
