use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

use super::{BatchNorm, Binder, ParamId, ParamStore, Session};

/// Fully connected layer followed by batch norm and ReLU: `relu(bn(x W))`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weights: ParamId,
    pub bn: BatchNorm,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        Dense {
            weights: store.uniform(format!("{name}.weights"), &[inputs, outputs], inputs, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), outputs),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        check_width("dense", s.graph.shape(x), self.inputs)?;
        let w = p.var(&mut s.graph, self.weights);
        let y = s.graph.matmul(x, w)?;
        let y = self.bn.forward(s, p, y)?;
        Ok(s.graph.relu(y))
    }
}

/// Affine projection `x W + b` (softmax heads).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weights: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        Linear {
            weights: store.uniform(format!("{name}.weights"), &[inputs, outputs], inputs, rng),
            bias: store.weight(format!("{name}.bias"), Tensor::zeros([outputs])),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        check_width("linear", s.graph.shape(x), self.inputs)?;
        let w = p.var(&mut s.graph, self.weights);
        let b = p.var(&mut s.graph, self.bias);
        let y = s.graph.matmul(x, w)?;
        s.graph.add_row(y, b)
    }
}

fn check_width(op: &'static str, shape: &[usize], expected: usize) -> Result<()> {
    match shape {
        [_, n] if *n == expected => Ok(()),
        _ => Err(Error::invalid(
            op,
            format!("expected [rows, {expected}] input, got {shape:?}"),
        )),
    }
}
