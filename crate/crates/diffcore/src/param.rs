//! Named parameter and gradient stores.
//!
//! Parameters are addressed by string keys ("agg.1.gcn.w" style); ordered
//! maps keep every iteration deterministic.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Tensor) {
        self.entries.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> &Tensor {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("missing parameter `{key}`"))
    }

    pub fn get_mut(&mut self, key: &str) -> &mut Tensor {
        self.entries
            .get_mut(key)
            .unwrap_or_else(|| panic!("missing parameter `{key}`"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }
}

/// Gradients keyed like their parameters; accumulating writes sum.
#[derive(Clone, Debug, Default)]
pub struct GradStore {
    entries: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        GradStore::default()
    }

    pub fn accumulate(&mut self, key: &str, grad: &Tensor) {
        match self.entries.get_mut(key) {
            Some(t) => t.add_scaled(grad, 1.0),
            None => {
                self.entries.insert(key.to_string(), grad.clone());
            }
        }
    }

    /// Adds every gradient of `other` into this store.
    pub fn merge(&mut self, other: &GradStore) {
        for (k, g) in other.entries.iter() {
            self.accumulate(k, g);
        }
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |acc, t| acc.max(t.max_abs()))
    }
}
