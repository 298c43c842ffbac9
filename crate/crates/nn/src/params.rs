use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A named parameter tensor. Frozen parameters are never touched by the
/// optimizer and receive no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, frozen: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = self.entries.len();
        self.entries.push(Param {
            name: name.to_string(),
            value,
            frozen,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn by_id(&self, id: usize) -> &Param<T> {
        &self.entries[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Param<T> {
        &mut self.entries[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let id = self.id(name)?;
        self.entries[id].frozen = frozen;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.entries.iter_mut().for_each(|p| p.frozen = true);
    }

    /// Total scalar count across all tensors.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| !p.frozen).map(|p| p.value.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            tensors: self.entries.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient buffers aligned one-to-one with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(T::zero()));
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}
