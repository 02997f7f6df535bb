use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable weights versus running statistics that only the forward pass
/// updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    /// Included in the L2 penalty.
    pub decay: bool,
}

/// Named, ordered collection of every tensor a model owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            value,
            kind,
            decay: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn weight(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add(name, value, ParamKind::Weight)
    }

    pub fn buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add(name, value, ParamKind::Buffer)
    }

    /// Weight drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.weight(name, Tensor::new(shape.to_vec(), data).expect("valid shape"))
    }

    pub fn set_decay(&mut self, id: ParamId, decay: bool) {
        self.entries[id.0].decay = decay;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &Entry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// Total number of trainable scalars.
    pub fn weight_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.value.len())
            .sum()
    }

    /// Overwrites the value of an existing entry, keeping its shape.
    pub fn replace(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Data(format!("no parameter named {name}")))?;
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::shapes("replace parameter", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Copy of the entries whose name starts with `prefix`, in store order.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            let id = out.add(e.name.clone(), e.value.clone(), e.kind);
            out.set_decay(id, e.decay);
        }
        out
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, value) in updates {
            debug_assert_eq!(self.entries[id.0].value.shape(), value.shape());
            self.entries[id.0].value = value;
        }
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]; `None` means the
/// parameter did not take part in the loss.
#[derive(Clone, Debug)]
pub struct Gradients(pub Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }
}

/// Binds store entries to graph leaves for one forward pass, and collects
/// the running-statistic updates that pass produces.
pub struct Binder<'s> {
    store: &'s ParamStore,
    vars: Vec<Option<Var>>,
    track_grads: bool,
    updates: Vec<(ParamId, Tensor)>,
}

impl<'s> Binder<'s> {
    pub fn new(store: &'s ParamStore, track_grads: bool) -> Self {
        Binder {
            store,
            vars: vec![None; store.len()],
            track_grads,
            updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Leaf for `id`, created on first use and shared afterwards.
    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let rg = self.track_grads && entry.kind == ParamKind::Weight;
        let v = g.leaf(entry.value.clone(), rg);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, id: ParamId) -> &'s Tensor {
        self.store.get(id)
    }

    pub fn push_update(&mut self, id: ParamId, value: Tensor) {
        self.updates.push((id, value));
    }

    pub fn gradients(&self, g: &Graph) -> Gradients {
        Gradients(
            self.vars
                .iter()
                .map(|v| v.and_then(|v| g.grad(v).cloned()))
                .collect(),
        )
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor)> {
        self.updates
    }
}
