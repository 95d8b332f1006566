//! Named parameter storage with additively accumulated gradients.

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Trainable entries receive optimizer updates; non-trainable entries
    /// (running statistics) are state carried across steps.
    pub trainable: bool,
}

#[derive(Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name '{name}'"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            value,
            grad,
            trainable,
        });
        id
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(
            value.shape(),
            self.entries[id.0].value.shape(),
            "set_value must preserve shape"
        );
        self.entries[id.0].value = value;
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        self.entries[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    /// Total element count across trainable entries.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, Tensor<f32>)> = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.value.cast::<f32>()))
            .collect();
        checkpoint::write_checkpoint(path, &tensors)
    }

    /// Load a checkpoint into this store. Every stored tensor must match an
    /// existing entry by name and shape, and every entry must be present.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let tensors = checkpoint::read_checkpoint(path)?;
        if tensors.len() != self.entries.len() {
            return Err(Error::data(format!(
                "checkpoint/config mismatch: checkpoint holds {} tensors, model expects {}",
                tensors.len(),
                self.entries.len()
            )));
        }
        for (name, t) in tensors {
            let Some(&idx) = self.by_name.get(&name) else {
                return Err(Error::data(format!(
                    "checkpoint/config mismatch: unknown tensor '{name}'"
                )));
            };
            if t.shape() != self.entries[idx].value.shape() {
                return Err(Error::data(format!(
                    "checkpoint/config mismatch: tensor '{name}' has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.entries[idx].value.shape()
                )));
            }
            self.entries[idx].value = t.cast::<T>();
        }
        Ok(())
    }

    /// Snapshot of all values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (e, t) in self.entries.iter_mut().zip(snapshot) {
            e.value = t.clone();
        }
    }
}

/// He fan-in normal initialization: `N(0, sqrt(2 / fan_in))`.
pub fn he_normal<T: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data)
}
