//! Automatic sleep stage scoring from raw single-channel EEG.
//!
//! The crate bundles everything needed to train and evaluate the model:
//!
//! * [`tensor`]: dense arrays with reverse-mode differentiation,
//! * [`nn`]: convolution, batch normalization, dropout, dense and peephole LSTM layers,
//! * [`model`]: the two-branch CNN plus bidirectional LSTM network with its residual shortcut,
//! * [`data`]: EDF/EDF+ parsing, epoch extraction, label mapping, oversampling and batching,
//! * [`train`]: class-balanced pre-training followed by sequential fine-tuning,
//! * [`eval`]: metrics, cross-validation and model inspection,
//! * [`checkpoint`] and [`hypnogram`]: persistence and rendering.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod hypnogram;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use checkpoint::{Checkpoint, Provenance, Scope};
pub use data::{EpochRecord, Stage, SubjectRecording};
pub use model::{DeepSleepNet, ModelConfig};
pub use tensor::{Graph, Padding, Tensor, Var};
pub use train::TrainPlan;
