use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named learnable tensors. Names are unique and iterate in sorted order;
/// shapes never change after insertion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, tensor.with_grad(true));
        Ok(())
    }

    /// Inserts a tensor of `shape` drawn from `uniform(-scale, scale)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<()> {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.entries.get_mut(name).map(Tensor::data_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Moves every entry of `other` into `self`.
    pub fn extend(&mut self, other: ParameterSet) -> Result<()> {
        for (name, t) in other.entries {
            self.insert(name, t)?;
        }
        Ok(())
    }

    /// The entries whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Gradient per parameter name, flat in the parameter's row-major order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    entries: BTreeMap<String, Vec<f64>>,
}

impl ParamGrads {
    pub fn insert(&mut self, name: String, grad: Vec<f64>) {
        self.entries.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// `self += scale · other`, entry by entry.
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (name, g) in &other.entries {
            let slot = self
                .entries
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.entries.values_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }
}
