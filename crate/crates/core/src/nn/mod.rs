//! Trainable layers built on the [`crate::tensor`] tape.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`] rather than tensors, so a
//! whole model serializes as one flat list of named arrays. A forward pass
//! runs inside a [`Session`] (graph, mode and random stream) and reads
//! parameters through a [`Binder`].

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod lstm;
mod params;

pub use batchnorm::{BatchNorm, BN_DECAY, BN_EPSILON};
pub use conv::ConvBlock;
pub use dense::{Dense, Linear};
pub use dropout::dropout;
pub use lstm::{BiLstm, BiLstmOutput, BiState, LaneLayout, LayerOutput, LstmState, PeepholeLstm};
pub use params::{Binder, Entry, Gradients, ParamId, ParamKind, ParamStore};

use rand_chacha::ChaCha8Rng;

use crate::tensor::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State threaded through one forward pass.
pub struct Session<'r> {
    pub graph: Graph,
    pub mode: Mode,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Session<'r> {
    pub fn train(rng: &'r mut ChaCha8Rng) -> Self {
        Session {
            graph: Graph::new(),
            mode: Mode::Train,
            rng: Some(rng),
        }
    }

    pub fn eval() -> Session<'static> {
        Session {
            graph: Graph::new(),
            mode: Mode::Eval,
            rng: None,
        }
    }

    pub fn with_mode(mode: Mode, rng: Option<&'r mut ChaCha8Rng>) -> Self {
        Session {
            graph: Graph::new(),
            mode,
            rng,
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub(crate) fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        self.rng.as_deref_mut()
    }
}
