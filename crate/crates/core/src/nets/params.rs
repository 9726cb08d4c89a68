use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Named parameter tensors of one network, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape`, as parameters when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Replaces every tensor with `other`'s. Names and shapes are checked
    /// before anything is written.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Contract(format!(
                "parameter count {} vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (k, v) in other.iter() {
            let dst = self
                .tensors
                .get(k)
                .ok_or_else(|| Error::Contract(format!("unknown parameter `{k}`")))?;
            if dst.shape() != v.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{k}` shape {:?} vs {:?}",
                    dst.shape(),
                    v.shape()
                )));
            }
        }
        self.tensors = other.tensors.clone();
        Ok(())
    }

    /// Zero tensors shaped like `self`.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// FNV-1a over names, shapes and value bits; changes if any parameter moves.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (k, v) in &self.tensors {
            feed(k.as_bytes());
            for d in v.shape() {
                feed(&(*d as u64).to_le_bytes());
            }
            for x in v.data() {
                feed(&x.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    /// Swaps the handle bound to `name`, e.g. for probing one tensor.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        *slot = var;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients of every bound tensor, keyed by name.
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, v)| g.get(*v).map(|t| (k.clone(), t.clone())))
            .collect()
    }
}
