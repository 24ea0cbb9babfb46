use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::TensorBuf;
use crate::error::{Result, SbrError};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, TensorBuf>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: TensorBuf) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&TensorBuf> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TensorBuf> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&TensorBuf> {
        self.entries
            .get(name)
            .ok_or_else(|| SbrError::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorBuf)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut TensorBuf)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(TensorBuf::len).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), TensorBuf::zeros(v.shape().to_vec())))
                .collect(),
        }
    }

    /// Moves every entry of `other` into `self`, rejecting name collisions.
    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(SbrError::Contract(format!("duplicate parameter `{k}`")));
            }
            self.entries.insert(k, v);
        }
        Ok(())
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(SbrError::dim("parameter count", self.entries.len(), other.entries.len()));
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(SbrError::Contract(format!(
                    "parameter name mismatch: `{ka}` vs `{kb}`"
                )));
            }
            if va.shape() != vb.shape() {
                return Err(SbrError::Contract(format!(
                    "shape mismatch for `{ka}`: {:?} vs {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.entries
            .values()
            .zip(other.entries.values())
            .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}
