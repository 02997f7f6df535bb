use crate::error::{Error, Result};
use crate::model::CNN_PREFIX;
use crate::nn::{Binder, Gradients, ParamId, ParamKind, ParamStore, Session};
use crate::tensor::Var;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments for every weight of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of steps taken.
    pub t: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            t: 0,
            moments: vec![None; store.len()],
        }
    }

    /// First and second moments of `id`, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments[id.index()]
            .as_ref()
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One Adam update. `lr(id)` gives each weight's learning rate; weights
    /// without a gradient are left alone, as are weights with `lr == 0`
    /// (their moments still advance). Fails before touching anything if a
    /// gradient is not finite.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        lr: impl Fn(ParamId) -> f64,
    ) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::shapes("adam step", store.get(id).shape(), g.shape()));
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(store.entry(id).name.clone()));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids() {
            if store.entry(id).kind != ParamKind::Weight {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for ((mi, vi), &gi) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let rate = lr(id);
            if rate == 0.0 {
                continue;
            }
            for ((p, mi), vi) in store.get_mut(id).data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *p -= rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `threshold`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, threshold: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.0.iter_mut().flatten() {
            g.scale_in_place(scale);
        }
    }
    norm
}

/// `lambda * sum(w^2)` over the store entries flagged for decay (the first
/// convolution filters), or `None` if there are none.
pub fn l2_penalty(s: &mut Session, p: &mut Binder, lambda: f64) -> Result<Option<Var>> {
    let store = p.store();
    let mut total: Option<Var> = None;
    for id in store.ids().filter(|&id| store.entry(id).decay) {
        let w = p.var(&mut s.graph, id);
        let sq = s.graph.sum_squares(w);
        total = Some(match total {
            Some(t) => s.graph.add(t, sq)?,
            None => sq,
        });
    }
    Ok(total.map(|t| s.graph.scale(t, lambda)))
}

/// A set of weights sharing one learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: &'static str,
    pub ids: Vec<ParamId>,
    pub lr: f64,
}

/// Splits the weights into the CNN group (`lr_cnn`) and everything else
/// (`lr_sequence`).
pub fn param_groups(store: &ParamStore, lr_cnn: f64, lr_sequence: f64) -> Vec<ParamGroup> {
    let (cnn, rest): (Vec<ParamId>, Vec<ParamId>) = store
        .ids()
        .filter(|&id| store.entry(id).kind == ParamKind::Weight)
        .partition(|&id| store.entry(id).name.starts_with(CNN_PREFIX));
    vec![
        ParamGroup {
            name: "cnn",
            ids: cnn,
            lr: lr_cnn,
        },
        ParamGroup {
            name: "sequence",
            ids: rest,
            lr: lr_sequence,
        },
    ]
}

/// Per-id learning-rate table built from groups.
pub fn learning_rates(store: &ParamStore, groups: &[ParamGroup]) -> Vec<f64> {
    let mut lr = vec![0.0; store.len()];
    for g in groups {
        for id in &g.ids {
            lr[id.index()] = g.lr;
        }
    }
    lr
}
