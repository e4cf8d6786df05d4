use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Parameter values, borrowed immutably by a tape during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamValues(Vec<Tensor>);

impl ParamValues {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

/// Gradient slots paired one-to-one with parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    /// Adds `other` into `self` slot by slot.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (dst, src) in self.0.iter_mut().zip(&other.0) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }
}

/// Named trainable tensors, each with a gradient of identical shape.
///
/// Insertion order is preserved and defines the serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: ParamValues,
    grads: Gradients,
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            index: HashMap::new(),
            values: ParamValues(Vec::new()),
            grads: Gradients(Vec::new()),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invariant(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.names.len());
        self.grads.0.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.0.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    /// Inserts a `rows × cols` tensor drawn from uniform(−scale, scale).
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        self.insert(name, Tensor::new(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invariant(format!("unknown parameter {name}")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        self.values.get(id)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values.0[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        self.grads.get(id)
    }

    pub fn values(&self) -> &ParamValues {
        &self.values
    }

    pub fn grads(&self) -> &Gradients {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut Gradients {
        &mut self.grads
    }

    /// Immutable values for building a tape alongside mutable gradients
    /// for its backward pass.
    pub fn split_mut(&mut self) -> (&ParamValues, &mut Gradients) {
        (&self.values, &mut self.grads)
    }

    /// Simultaneous mutable access for optimizers.
    pub fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &[Tensor]) {
        (&mut self.values.0, &self.grads.0)
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    /// Fresh zeroed gradient slots shaped like this store.
    pub fn zeroed_gradients(&self) -> Gradients {
        Gradients(
            self.values
                .0
                .iter()
                .map(|v| Tensor::zeros(v.rows(), v.cols()))
                .collect(),
        )
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.0.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.0.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new();
        store.insert_zeros("w", 2, 2).unwrap();
        assert!(store.insert_zeros("w", 1, 1).is_err());
    }

    #[test]
    fn gradient_slots_mirror_value_shapes() {
        let mut store = ParameterStore::new();
        let a = store.insert_zeros("a", 3, 2).unwrap();
        let b = store.insert_zeros("b", 1, 4).unwrap();
        assert_eq!(store.grad(a).shape(), &[3, 2]);
        assert_eq!(store.grad(b).shape(), &[1, 4]);
        assert_eq!(store.scalar_count(), 10);
        assert_eq!(store.id("b").unwrap(), b);
    }
}
