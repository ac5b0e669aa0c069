use std::collections::BTreeMap;
use std::sync::Arc;

use super::Tensor;

/// Index of a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Arc<Tensor>,
    decay: bool,
}

/// Ordered collection of named parameters.
///
/// Values sit behind `Arc` so graphs can hold them without copying; an
/// optimizer step goes through [`ParamStore::get_mut`], which copies on write
/// only if some graph is still alive.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `decay` marks it for decoupled weight decay.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value: Arc::new(value),
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Bitwise equality of every value.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradient map: parameter id to gradient buffer. Absent ids carry no gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    /// Single coordinate, zero when the parameter received no gradient.
    pub fn coord(&self, id: ParamId, index: usize) -> f64 {
        self.grads.get(&id).map_or(0.0, |t| t.data()[index])
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        match self.grads.get_mut(&id) {
            Some(g) => g.add_assign(grad),
            None => {
                self.grads.insert(id, grad.clone());
            }
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradMap, scale: f64) {
        for (id, g) in &other.grads {
            let mut s = g.clone();
            s.scale_assign(scale);
            self.accumulate(*id, &s);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            g.scale_assign(c);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads.values().map(Tensor::sum_sq).fold(0.0, |a, b| a + b).sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// Bitwise equality, treating a missing entry as all zeros.
    pub fn bit_eq(&self, other: &GradMap) -> bool {
        let ids: std::collections::BTreeSet<_> =
            self.grads.keys().chain(other.grads.keys()).collect();
        ids.into_iter().all(|id| match (self.grads.get(id), other.grads.get(id)) {
            (Some(a), Some(b)) => a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            (Some(t), None) | (None, Some(t)) => t.data().iter().all(|v| *v == 0.0),
            (None, None) => true,
        })
    }

    /// Largest elementwise absolute difference, missing entries read as zeros.
    pub fn max_abs_diff(&self, other: &GradMap) -> f64 {
        let ids: std::collections::BTreeSet<_> =
            self.grads.keys().chain(other.grads.keys()).collect();
        let mut worst: f64 = 0.0;
        for id in ids {
            match (self.grads.get(id), other.grads.get(id)) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        worst = worst.max((x - y).abs());
                    }
                }
                (Some(t), None) | (None, Some(t)) => worst = worst.max(t.max_abs()),
                (None, None) => {}
            }
        }
        worst
    }
}
