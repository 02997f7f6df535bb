use crate::error::Result;
use crate::tensor::{Tensor, Var};

use super::{Binder, Mode, ParamId, ParamStore, Session};

pub const BN_DECAY: f64 = 0.999;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization over every axis but the last.
///
/// Running statistics follow `m <- decay * m + (1 - decay) * batch`. In eval
/// mode they are read with zero-debiasing: after `t` updates from the initial
/// `(0, 1)` the estimate is `(m - decay^t * m0) / (1 - decay^t)`, which equals
/// the stored value once `decay^t` is negligible and is exact for short runs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub moving_mean: ParamId,
    pub moving_var: ParamId,
    /// Number of running-statistic updates applied so far.
    pub updates: ParamId,
    pub channels: usize,
    pub decay: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.weight(format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: store.weight(format!("{name}.beta"), Tensor::zeros([channels])),
            moving_mean: store.buffer(format!("{name}.moving_mean"), Tensor::zeros([channels])),
            moving_var: store.buffer(format!("{name}.moving_var"), Tensor::full([channels], 1.0)),
            updates: store.buffer(format!("{name}.updates"), Tensor::scalar(0.0)),
            channels,
            decay: BN_DECAY,
            epsilon: BN_EPSILON,
        }
    }

    pub fn forward(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        let gamma = p.var(&mut s.graph, self.gamma);
        let beta = p.var(&mut s.graph, self.beta);
        match s.mode {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, gamma, beta, self.epsilon)?;
                let blend = |old: &Tensor, batch: &[f64]| {
                    let data = old
                        .data()
                        .iter()
                        .zip(batch)
                        .map(|(o, b)| self.decay * o + (1.0 - self.decay) * b)
                        .collect();
                    Tensor::new([self.channels], data).expect("channel count")
                };
                let mean = blend(p.value(self.moving_mean), &stats.mean);
                let var = blend(p.value(self.moving_var), &stats.var);
                let count = p.value(self.updates).data()[0] + 1.0;
                p.push_update(self.moving_mean, mean);
                p.push_update(self.moving_var, var);
                p.push_update(self.updates, Tensor::scalar(count));
                Ok(y)
            }
            Mode::Eval => {
                let (mean, var) = self.running_estimates(p.store());
                let shift: Vec<f64> = mean.iter().map(|m| -m).collect();
                let inv_std: Vec<f64> = var
                    .iter()
                    .map(|v| 1.0 / (v.max(0.0) + self.epsilon).sqrt())
                    .collect();
                let g = &mut s.graph;
                let shift = g.constant(Tensor::from_vec(shift));
                let inv_std = g.constant(Tensor::from_vec(inv_std));
                let centered = g.add_row(x, shift)?;
                let normed = g.mul_row(centered, inv_std)?;
                let scaled = g.mul_row(normed, gamma)?;
                g.add_row(scaled, beta)
            }
        }
    }

    /// Debiased running mean and variance.
    pub fn running_estimates(&self, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
        let mean = store.get(self.moving_mean).data();
        let var = store.get(self.moving_var).data();
        let t = store.get(self.updates).data()[0];
        if t <= 0.0 {
            return (mean.to_vec(), var.to_vec());
        }
        let residual = self.decay.powf(t);
        let norm = 1.0 - residual;
        (
            mean.iter().map(|m| m / norm).collect(),
            var.iter().map(|v| (v - residual) / norm).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(channels: usize) -> (ParamStore, BatchNorm) {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", channels);
        (store, bn)
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let (store, bn) = setup(3);
        let mut s = Session::eval();
        let mut p = Binder::new(&store, false);
        let x = s
            .graph
            .constant(Tensor::new([2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -7.0]).unwrap());
        let y = bn.forward(&mut s, &mut p, x).unwrap();
        let (a, b) = (s.graph.value(x).data(), s.graph.value(y).data());
        for (a, b) in a.iter().zip(b) {
            assert!((a / (1.0 + BN_EPSILON).sqrt() - b).abs() < 1e-15);
        }
    }

    #[test]
    fn train_pass_updates_moving_stats_with_decay() {
        let (mut store, bn) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x_data = vec![10.0, 100.0, 30.0, 200.0, 50.0, 300.0, 70.0, 400.0];
        let updates = {
            let mut s = Session::train(&mut rng);
            let mut p = Binder::new(&store, true);
            let x = s.graph.constant(Tensor::new([4, 2], x_data).unwrap());
            let y = bn.forward(&mut s, &mut p, x).unwrap();
            // normalized outputs: zero mean, unit variance per channel
            let v = s.graph.value(y).data();
            for c in 0..2 {
                let col: Vec<f64> = v.iter().skip(c).step_by(2).copied().collect();
                let mean = col.iter().sum::<f64>() / 4.0;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-6);
            }
            p.into_updates()
        };
        store.apply_updates(updates);
        let mm = store.get(bn.moving_mean).data();
        assert!((mm[0] - 0.001 * 40.0).abs() < 1e-15);
        assert!((mm[1] - 0.001 * 250.0).abs() < 1e-15);
        let mv = store.get(bn.moving_var).data();
        assert!((mv[0] - (0.999 + 0.001 * 500.0)).abs() < 1e-12);
        assert_eq!(store.get(bn.updates).data(), &[1.0]);

        // debiased estimate after one update is exactly the batch statistic
        let (mean, var) = bn.running_estimates(&store);
        assert!((mean[0] - 40.0).abs() < 1e-9);
        assert!((var[0] - 500.0).abs() < 1e-9);
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let (store, bn) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = Session::train(&mut rng);
        let mut p = Binder::new(&store, true);
        let x = s.graph.constant(Tensor::zeros([1, 2]));
        assert!(bn.forward(&mut s, &mut p, x).is_err());
    }
}
