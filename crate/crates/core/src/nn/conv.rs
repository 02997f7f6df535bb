use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Padding, Var};

use super::{BatchNorm, Binder, ParamId, ParamStore, Session};

/// conv1d -> batch norm -> ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub filters: ParamId,
    pub width: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub bn: BatchNorm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        weight_decay: bool,
    ) -> Self {
        assert!(width >= 1 && stride >= 1, "width and stride must be positive");
        let filters = store.uniform(
            format!("{name}.filters"),
            &[width, in_ch, out_ch],
            width * in_ch,
            rng,
        );
        store.set_decay(filters, weight_decay);
        ConvBlock {
            filters,
            width,
            in_ch,
            out_ch,
            stride,
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_ch),
        }
    }

    /// Pre-activation output (after batch norm, before ReLU).
    pub fn normalized(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        let ch = *s.graph.shape(x).last().unwrap_or(&0);
        if ch != self.in_ch {
            return Err(Error::invalid(
                "conv_block",
                format!("expected {} input channels, got {ch}", self.in_ch),
            ));
        }
        let f = p.var(&mut s.graph, self.filters);
        let y = s.graph.conv1d(x, f, self.stride, Padding::Same)?;
        self.bn.forward(s, p, y)
    }

    pub fn forward(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        let y = self.normalized(s, p, x)?;
        Ok(s.graph.relu(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn eval_with_identity_norm_is_relu_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let block = ConvBlock::new(&mut store, &mut rng, "c", 3, 2, 4, 2, true);
        assert!(store.entry(block.filters).decay);
        let x = Tensor::new(
            [1, 7, 2],
            (0..14).map(|v| (v as f64 * 0.7).sin()).collect(),
        )
        .unwrap();

        let mut s = Session::eval();
        let mut p = Binder::new(&store, false);
        let xv = s.graph.constant(x);
        let y = block.forward(&mut s, &mut p, xv).unwrap();

        let f = s.graph.constant(store.get(block.filters).clone());
        let c = s.graph.conv1d(xv, f, 2, Padding::Same).unwrap();
        let expect: Vec<f64> = s
            .graph
            .value(c)
            .data()
            .iter()
            .map(|v| (v / (1.0f64 + 1e-5).sqrt()).max(0.0))
            .collect();
        for (a, b) in s.graph.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn train_mode_normalized_output_has_zero_channel_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let block = ConvBlock::new(&mut store, &mut rng, "c", 5, 1, 3, 1, false);
        let x = Tensor::new([3, 20, 1], (0..60).map(|v| ((v * v) % 17) as f64).collect()).unwrap();
        let mut s = Session::train(&mut rng);
        let mut p = Binder::new(&store, true);
        let xv = s.graph.constant(x);
        let y = block.normalized(&mut s, &mut p, xv).unwrap();
        let v = s.graph.value(y).data();
        for c in 0..3 {
            let mean: f64 = v.iter().skip(c).step_by(3).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let block = ConvBlock::new(&mut store, &mut rng, "c", 3, 2, 4, 1, false);
        let mut s = Session::eval();
        let mut p = Binder::new(&store, false);
        let x = s.graph.constant(Tensor::zeros([1, 8, 3]));
        assert!(block.forward(&mut s, &mut p, x).is_err());
    }
}
