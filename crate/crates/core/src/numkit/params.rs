use std::collections::HashMap;

use super::{Scalar, SeededRng, Tensor};
use crate::error::{Error, Result};

/// Named, ordered collection of learnable tensors.
///
/// Names are dotted paths (`temporal.block0.wq`); the leading segment is the
/// group prefix used by freeze lists and checkpoint diffs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, t));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get_index(&self, i: usize) -> (&str, &Tensor<T>) {
        let (n, t) = &self.entries[i];
        (n, t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Copy every parameter of `other` whose name starts with `prefix`.
    pub fn merge_prefix(&mut self, other: &ParamStore<T>, prefix: &str) {
        for (n, t) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            self.insert(n, t.clone());
        }
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut SeededRng) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.normal() * std)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape/len agree"));
    }

    /// `[fan_in×fan_out]` matrix with Xavier-uniform entries.
    pub fn init_xavier(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut SeededRng) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of((rng.uniform() * 2.0 - 1.0) * bound))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data).expect("shape/len agree"));
    }

    /// Weight `{name}.w` (Xavier) and a zero `1×fan_out` bias `{name}.b`.
    pub fn init_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut SeededRng) {
        self.init_xavier(&format!("{name}.w"), fan_in, fan_out, rng);
        self.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    }

    pub fn init_layer_norm(&mut self, name: &str, width: usize) {
        self.insert(format!("{name}.g"), Tensor::full(&[1, width], T::one()));
        self.insert(format!("{name}.b"), Tensor::zeros(&[1, width]));
    }

    /// Names of parameters that differ between `self` and `other`.
    pub fn diff(&self, other: &ParamStore<T>) -> Vec<String> {
        self.iter()
            .filter(|(n, t)| other.get(n) != Some(*t))
            .map(|(n, _)| n.to_string())
            .collect()
    }

    pub fn map_values(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for (n, t) in &mut self.entries {
            f(n, t);
        }
    }
}
