//! The full scoring network.
//!
//! Two CNN branches read the raw epoch: a small first-layer filter tuned for
//! temporal detail and a large one tuned for frequency content. Their
//! flattened outputs are concatenated into one feature vector per epoch. A
//! two-layer bidirectional peephole LSTM reads the feature sequence, and its
//! output is added to a fully connected projection of the same features
//! before the softmax layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EpochRecord, Stage, SubjectRecording};
use crate::error::{Error, Result};
use crate::nn::{
    dropout, BiLstm, BiState, Binder, ConvBlock, Dense, LaneLayout, Linear, ParamStore, Session,
};
use crate::tensor::{kernels, softmax_rows, Tensor, Var};

/// Layer sizes of one CNN branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub conv1_width: usize,
    pub conv1_stride: usize,
    pub conv1_filters: usize,
    /// Size and stride of the first max-pool.
    pub pool1: usize,
    pub conv_width: usize,
    pub conv_filters: usize,
    pub n_convs: usize,
    pub pool2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Sampling rate in Hz.
    pub fs: usize,
    pub n_classes: usize,
    pub small: BranchConfig,
    pub large: BranchConfig,
    /// Hidden units per direction.
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub shortcut_width: usize,
    pub seq_length: usize,
    pub dropout: f64,
}

pub const EPOCH_SECONDS: usize = 30;

fn round_half(x: f64) -> usize {
    (x.round() as usize).max(1)
}

impl ModelConfig {
    /// Default architecture for a sampling rate: the first small filter spans
    /// half a second with stride fs/16, the first large filter spans four
    /// seconds with stride fs/2 (non-integers rounded to nearest, minimum 1).
    pub fn for_sampling_rate(fs: usize) -> Result<Self> {
        if fs < 16 {
            return Err(Error::invalid(
                "model config",
                format!("sampling rate must be at least 16 Hz, got {fs}"),
            ));
        }
        let f = fs as f64;
        Ok(ModelConfig {
            fs,
            n_classes: Stage::COUNT,
            small: BranchConfig {
                conv1_width: round_half(f / 2.0),
                conv1_stride: round_half(f / 16.0),
                conv1_filters: 64,
                pool1: 8,
                conv_width: 8,
                conv_filters: 128,
                n_convs: 3,
                pool2: 4,
            },
            large: BranchConfig {
                conv1_width: fs * 4,
                conv1_stride: round_half(f / 2.0),
                conv1_filters: 64,
                pool1: 4,
                conv_width: 6,
                conv_filters: 128,
                n_convs: 3,
                pool2: 2,
            },
            lstm_hidden: 512,
            lstm_layers: 2,
            shortcut_width: 1024,
            seq_length: 25,
            dropout: 0.5,
        })
    }

    pub fn epoch_len(&self) -> usize {
        self.fs * EPOCH_SECONDS
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model config", msg));
        if self.fs < 16 {
            return bad(format!("sampling rate must be at least 16 Hz, got {}", self.fs));
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.shortcut_width != 2 * self.lstm_hidden {
            return bad(format!(
                "shortcut width {} must equal twice the LSTM hidden size {}",
                self.shortcut_width, self.lstm_hidden
            ));
        }
        if self.lstm_layers == 0 || self.seq_length == 0 {
            return bad("LSTM layers and sequence length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for b in [&self.small, &self.large] {
            let sizes = [
                b.conv1_width,
                b.conv1_stride,
                b.conv1_filters,
                b.pool1,
                b.conv_width,
                b.conv_filters,
                b.pool2,
            ];
            if sizes.contains(&0) {
                return bad(format!("branch sizes must be positive: {b:?}"));
            }
        }
        Ok(())
    }

    /// Output shape (length, channels) after every layer of a branch.
    pub fn branch_plan(&self, b: &BranchConfig) -> Vec<LayerShape> {
        let mut plan = Vec::new();
        let mut len = self.epoch_len();
        len = kernels::same_window(len, b.conv1_width, b.conv1_stride).out_len;
        plan.push(LayerShape::new("conv1", len, b.conv1_filters));
        len = kernels::same_window(len, b.pool1, b.pool1).out_len;
        plan.push(LayerShape::new("pool1", len, b.conv1_filters));
        for i in 0..b.n_convs {
            plan.push(LayerShape::new(
                ["conv2", "conv3", "conv4"].get(i).copied().unwrap_or("conv"),
                len,
                b.conv_filters,
            ));
        }
        len = kernels::same_window(len, b.pool2, b.pool2).out_len;
        let ch = if b.n_convs > 0 {
            b.conv_filters
        } else {
            b.conv1_filters
        };
        plan.push(LayerShape::new("pool2", len, ch));
        plan
    }

    pub fn branch_width(&self, b: &BranchConfig) -> usize {
        let last = *self.branch_plan(b).last().expect("nonempty plan");
        last.len * last.channels
    }

    /// Width of the concatenated per-epoch feature vector.
    pub fn feature_width(&self) -> usize {
        self.branch_width(&self.small) + self.branch_width(&self.large)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: &'static str,
    pub len: usize,
    pub channels: usize,
}

impl LayerShape {
    fn new(name: &'static str, len: usize, channels: usize) -> Self {
        LayerShape {
            name,
            len,
            channels,
        }
    }
}

/// conv1 -> pool -> dropout -> conv x n -> pool -> flatten.
#[derive(Clone, Debug)]
pub struct CnnBranch {
    pub conv1: ConvBlock,
    pub convs: Vec<ConvBlock>,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
}

impl CnnBranch {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        b: &BranchConfig,
        dropout: f64,
    ) -> Self {
        let conv1 = ConvBlock::new(
            store,
            rng,
            &format!("{name}.conv1"),
            b.conv1_width,
            1,
            b.conv1_filters,
            b.conv1_stride,
            true,
        );
        let mut convs = Vec::with_capacity(b.n_convs);
        let mut in_ch = b.conv1_filters;
        for i in 0..b.n_convs {
            convs.push(ConvBlock::new(
                store,
                rng,
                &format!("{name}.conv{}", i + 2),
                b.conv_width,
                in_ch,
                b.conv_filters,
                1,
                false,
            ));
            in_ch = b.conv_filters;
        }
        CnnBranch {
            conv1,
            convs,
            pool1: b.pool1,
            pool2: b.pool2,
            dropout,
        }
    }

    /// `[batch, len, 1]` -> `[batch, features]`
    pub fn forward(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        let mut h = self.conv1.forward(s, p, x)?;
        h = s.graph.maxpool1d(h, self.pool1, self.pool1)?;
        h = dropout(s, h, self.dropout)?;
        for conv in &self.convs {
            h = conv.forward(s, p, h)?;
        }
        h = s.graph.maxpool1d(h, self.pool2, self.pool2)?;
        let shape = s.graph.shape(h).to_vec();
        s.graph.reshape(h, [shape[0], shape[1] * shape[2]])
    }

    /// Post-ReLU output of the first convolution, `[batch, len, filters]`.
    pub fn first_layer(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        self.conv1.forward(s, p, x)
    }
}

/// Logits for a batch of sequences plus the state to continue from.
pub struct SequenceOutput {
    /// `[rows, n_classes]`
    pub logits: Var,
    pub state: BiState,
    /// First forward LSTM layer cell state after each step.
    pub forward_cells: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub epoch_index: usize,
    pub stage: Stage,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DeepSleepNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub small: CnnBranch,
    pub large: CnnBranch,
    pub bilstm: BiLstm,
    pub shortcut: Dense,
    pub output: Linear,
}

/// Prefix shared by every parameter of the representation-learning CNNs.
pub const CNN_PREFIX: &str = "cnn_";

impl DeepSleepNet {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let small = CnnBranch::new(&mut params, &mut rng, "cnn_small", &config.small, config.dropout);
        let large = CnnBranch::new(&mut params, &mut rng, "cnn_large", &config.large, config.dropout);
        let d = config.feature_width();
        let bilstm = BiLstm::new(
            &mut params,
            &mut rng,
            "bilstm",
            d,
            config.lstm_hidden,
            config.lstm_layers,
            config.dropout,
        );
        let shortcut = Dense::new(&mut params, &mut rng, "shortcut", d, config.shortcut_width);
        let output = Linear::new(
            &mut params,
            &mut rng,
            "output",
            config.shortcut_width,
            config.n_classes,
        );
        Ok(DeepSleepNet {
            config,
            params,
            small,
            large,
            bilstm,
            shortcut,
            output,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.config.feature_width()
    }

    /// Zero LSTM state for `lanes` parallel streams.
    pub fn reset_states(&self, lanes: usize) -> BiState {
        self.bilstm.zero_state(lanes)
    }

    /// `[batch, fs * 30, 1]` -> `[batch, features]`, the two branch outputs
    /// side by side.
    pub fn featurize(&self, s: &mut Session, p: &mut Binder, epochs: Var) -> Result<Var> {
        let expected = self.config.epoch_len();
        match s.graph.shape(epochs) {
            [_, len, 1] if *len == expected => {}
            shape => {
                return Err(Error::invalid(
                    "featurize",
                    format!(
                        "epochs must be [batch, {expected}, 1] (fs x 30 samples at {} Hz), got {shape:?}",
                        self.config.fs
                    ),
                ))
            }
        }
        let hs = self.small.forward(s, p, epochs)?;
        let hl = self.large.forward(s, p, epochs)?;
        s.graph.concat(&[hs, hl], 1)
    }

    /// Sequence residual part: `(h_fwd || h_bwd) + FC(a)`, dropout, then the
    /// class projection.
    pub fn sequence_pass(
        &self,
        s: &mut Session,
        p: &mut Binder,
        features: Var,
        layout: &LaneLayout,
        state: &BiState,
    ) -> Result<SequenceOutput> {
        let d = self.feature_width();
        match s.graph.shape(features) {
            [_, w] if *w == d => {}
            shape => {
                return Err(Error::invalid(
                    "sequence_pass",
                    format!("features must be [rows, {d}], got {shape:?}"),
                ))
            }
        }
        let a = dropout(s, features, self.config.dropout)?;
        let seq = self.bilstm.forward(s, p, a, layout, state)?;
        let short = self.shortcut.forward(s, p, a)?;
        let o = s.graph.add(seq.output, short)?;
        let o = dropout(s, o, self.config.dropout)?;
        let logits = self.output.forward(s, p, o)?;
        Ok(SequenceOutput {
            logits,
            state: seq.state,
            forward_cells: seq.forward_cells,
        })
    }

    /// Featurize lane-major epochs and run the sequence part.
    pub fn forward(
        &self,
        s: &mut Session,
        p: &mut Binder,
        epochs: Var,
        layout: &LaneLayout,
        state: &BiState,
    ) -> Result<SequenceOutput> {
        let a = self.featurize(s, p, epochs)?;
        self.sequence_pass(s, p, a, layout, state)
    }

    /// Scores one subject's night in order, in windows of `seq_length`
    /// epochs, starting from a zero state and carrying it across windows.
    pub fn predict(&self, subject: &SubjectRecording) -> Result<Vec<Prediction>> {
        Ok(self.score_subject(subject, &[])?.0)
    }

    /// Like [`predict`](Self::predict), also recording `tanh(c)` of the
    /// requested first-layer forward LSTM cells after every epoch.
    pub fn score_subject(
        &self,
        subject: &SubjectRecording,
        traced_cells: &[usize],
    ) -> Result<(Vec<Prediction>, Vec<Vec<f64>>)> {
        if subject.epochs.is_empty() {
            return Err(Error::Data(format!(
                "subject {} has no epochs to score",
                subject.subject_id
            )));
        }
        if self.config.n_classes != Stage::COUNT {
            return Err(Error::invalid(
                "predict",
                format!("model has {} classes, stages need 5", self.config.n_classes),
            ));
        }
        if let Some(&bad) = traced_cells.iter().find(|&&c| c >= self.config.lstm_hidden) {
            return Err(Error::invalid(
                "cell_trace",
                format!("cell {bad} out of range for {} hidden units", self.config.lstm_hidden),
            ));
        }
        let mut state = self.reset_states(1);
        let mut preds = Vec::with_capacity(subject.epochs.len());
        let mut trace = Vec::new();
        for window in subject.epochs.chunks(self.config.seq_length) {
            let mut s = Session::eval();
            let mut p = Binder::new(&self.params, false);
            let x = s.graph.constant(epochs_tensor(window, self.config.epoch_len())?);
            let layout = LaneLayout::single(window.len())?;
            let out = self.forward(&mut s, &mut p, x, &layout, &state)?;
            let probs = softmax_rows(s.graph.value(out.logits).data(), self.config.n_classes);
            for (e, row) in window.iter().zip(probs.chunks_exact(self.config.n_classes)) {
                let best = argmax(row);
                preds.push(Prediction {
                    epoch_index: e.epoch_index,
                    stage: Stage::from_index(best).expect("five classes"),
                    probs: row.to_vec(),
                });
            }
            if !traced_cells.is_empty() {
                for c in &out.forward_cells {
                    let cell = s.graph.value(*c).data();
                    trace.push(traced_cells.iter().map(|&k| cell[k].tanh()).collect());
                }
            }
            state = out.state;
        }
        Ok((preds, trace))
    }
}

/// Stacks epochs into a `[n, len, 1]` tensor.
pub fn epochs_tensor<E: std::borrow::Borrow<EpochRecord>>(epochs: &[E], len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(epochs.len() * len);
    for e in epochs {
        let e = e.borrow();
        if e.samples.len() != len {
            return Err(Error::invalid(
                "featurize",
                format!(
                    "epoch {} of {} has {} samples, expected {len}",
                    e.epoch_index,
                    e.subject_id,
                    e.samples.len()
                ),
            ));
        }
        data.extend(e.samples.iter().map(|&v| f64::from(v)));
    }
    Tensor::new([epochs.len(), len, 1], data)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
