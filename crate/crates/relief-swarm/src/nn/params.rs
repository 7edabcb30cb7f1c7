//! Named parameter collections and matching gradient buffers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Named tensors in deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    map: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            self.map.insert(name.to_string(), tensor).is_none(),
            "duplicate parameter name {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Glorot-uniform init: ±sqrt(6 / (fan_in + fan_out)).
    pub fn insert_glorot(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::from_vec(shape, data).expect("finite init"));
    }
}

/// Gradient buffers shaped like a [`ParameterSet`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let map = params
            .iter()
            .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self { map }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown gradient {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown gradient {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    /// self += scale * other, requiring identical key sets.
    pub fn accumulate(&mut self, scale: f64, other: &Gradients) -> Result<(), NnError> {
        if self.map.len() != other.map.len() {
            return Err(NnError::KeyMismatch(format!(
                "{} vs {} gradient entries",
                self.map.len(),
                other.map.len()
            )));
        }
        for (name, tensor) in &mut self.map {
            let theirs = other
                .map
                .get(name)
                .ok_or_else(|| NnError::KeyMismatch(format!("missing gradient {name}")))?;
            tensor.axpy(scale, theirs)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for tensor in self.map.values_mut() {
            for v in tensor.data_mut() {
                *v *= factor;
            }
        }
    }
}
