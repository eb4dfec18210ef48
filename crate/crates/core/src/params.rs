//! Named parameter storage shared by every model.

use std::collections::HashMap;

use rand::Rng as _;

use crate::autograd::Gradients;
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-differentiable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<S> {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
    pub value: Matrix<S>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    /// Registers a tensor. `dims` is the logical shape; storage is the
    /// `[dims[0] x product(rest)]` matrix (a row vector for rank 1).
    pub fn add(&mut self, name: &str, dims: &[usize], kind: ParamKind, value: Matrix<S>) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        assert_eq!(value.len(), dims.iter().product::<usize>(), "{name}: dims/value mismatch");
        let slot = self.entries.len();
        self.entries.push(ParamEntry { name: name.to_owned(), dims: dims.to_vec(), kind, value });
        self.index.insert(name.to_owned(), slot);
        slot
    }

    /// Adds a trainable tensor drawn from `U(-bound, bound)`.
    pub fn add_uniform(&mut self, name: &str, dims: &[usize], bound: f64, rng: &mut Rng) -> usize {
        let (rows, cols) = storage_shape(dims);
        let value = Matrix::from_fn(rows, cols, |_, _| S::cast(rng.random_range(-bound..=bound)));
        self.add(name, dims, ParamKind::Trainable, value)
    }

    pub fn add_filled(&mut self, name: &str, dims: &[usize], kind: ParamKind, fill: f64) -> usize {
        let (rows, cols) = storage_shape(dims);
        self.add(name, dims, kind, Matrix::filled(rows, cols, S::cast(fill)))
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, slot: usize) -> &ParamEntry<S> {
        &self.entries[slot]
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn value(&self, slot: usize) -> &Matrix<S> {
        &self.entries[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Matrix<S> {
        &mut self.entries[slot].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix<S>> {
        self.slot(name).map(|s| self.value(s))
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.value.len()).sum()
    }

    /// Copies every tensor whose name passes `filter` from `other`.
    pub fn copy_from(&mut self, other: &ParamStore<S>, filter: impl Fn(&str) -> bool) -> usize {
        let mut copied = 0;
        for entry in &mut self.entries {
            if !filter(&entry.name) {
                continue;
            }
            if let Some(src) = other.by_name(&entry.name) {
                assert_eq!(src.shape(), entry.value.shape(), "{}: shape mismatch on copy", entry.name);
                entry.value = src.clone();
                copied += 1;
            }
        }
        copied
    }

    /// Flattened view over all trainable scalars, in slot order.
    pub fn flat_trainable(&self) -> Vec<S> {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .flat_map(|e| e.value.as_slice().iter().copied())
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), dims: e.dims.clone(), kind: e.kind, value: e.value.cast() })
                .collect(),
            index: self.index.clone(),
        }
    }
}

pub fn storage_shape(dims: &[usize]) -> (usize, usize) {
    match dims {
        [] => (1, 1),
        [n] => (1, *n),
        [r, rest @ ..] => (*r, rest.iter().product()),
    }
}

/// Flattened gradient in the same order as [`ParamStore::flat_trainable`].
pub fn flat_gradient<S: Scalar>(store: &ParamStore<S>, grads: &Gradients<S>) -> Vec<S> {
    let mut out = Vec::new();
    for (slot, e) in store.entries().iter().enumerate() {
        if e.kind != ParamKind::Trainable {
            continue;
        }
        match grads.get(slot) {
            Some(g) => out.extend_from_slice(g.as_slice()),
            None => out.extend(std::iter::repeat_n(S::zero(), e.value.len())),
        }
    }
    out
}
