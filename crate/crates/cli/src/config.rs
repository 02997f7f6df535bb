//! The declarative run configuration (a TOML file) and flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepsleep::data::prepare::ChannelSpec;
use deepsleep::data::ScoringStandard;
use deepsleep::{ModelConfig, TrainPlan};
use serde::{Deserialize, Serialize};

/// Optional architecture changes on top of the defaults for the sampling
/// rate; mostly useful for quick experiments on small machines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub conv1_filters: Option<usize>,
    pub conv_filters: Option<usize>,
    pub n_convs: Option<usize>,
    /// Hidden units per LSTM direction; the shortcut width follows as twice
    /// this value.
    pub lstm_hidden: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub seq_length: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of `<id>-PSG.edf` files with matching hypnograms.
    pub data_dir: PathBuf,
    /// Where every artifact is written.
    pub output_dir: PathBuf,
    /// A signal label, or `{ positive = "...", negative = "..." }`.
    pub channel: ChannelSpec,
    /// Expected sampling rate; recordings at another rate are rejected.
    #[serde(default)]
    pub fs: Option<usize>,
    #[serde(default = "default_standard")]
    pub standard: ScoringStandard,
    /// Keep only 30 minutes of wake around the sleep period.
    #[serde(default = "yes")]
    pub trim_wake: bool,
    /// Cross-validation folds for `evaluate`.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Keep the nights of one person in the same fold (Sleep-EDF ids).
    #[serde(default = "yes")]
    pub group_nights: bool,
    /// Subjects used by `pretrain` and `finetune`; all prepared subjects when
    /// absent.
    #[serde(default)]
    pub train_subjects: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default)]
    pub plan: TrainPlan,
    #[serde(default)]
    pub model: ModelOverrides,
}

fn default_standard() -> ScoringStandard {
    ScoringStandard::Aasm
}

fn default_k() -> usize {
    20
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        config.data_dir = base.join(&config.data_dir);
        config.output_dir = base.join(&config.output_dir);
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            config.jobs = jobs;
        }
        config.plan.seed = config.seed;
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        config.jobs = config.jobs.clamp(1, cores);
        config.plan.validate()?;
        if config.k == 0 {
            bail!("k must be positive");
        }
        Ok(config)
    }

    pub fn model_config(&self, fs: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::for_sampling_rate(fs)?;
        let m = &self.model;
        for b in [&mut c.small, &mut c.large] {
            if let Some(v) = m.conv1_filters {
                b.conv1_filters = v;
            }
            if let Some(v) = m.conv_filters {
                b.conv_filters = v;
            }
            if let Some(v) = m.n_convs {
                b.n_convs = v;
            }
        }
        if let Some(v) = m.lstm_hidden {
            c.lstm_hidden = v;
            c.shortcut_width = 2 * v;
        }
        if let Some(v) = m.lstm_layers {
            c.lstm_layers = v;
        }
        if let Some(v) = m.seq_length {
            c.seq_length = v;
        }
        if let Some(v) = m.dropout {
            c.dropout = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.output_dir.join("epochs.cache")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.output_dir.join("pretrained.ckpt")
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir.join("model.ckpt")
    }
}
