use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use robdistill_tensor::{Graph, Real, Tensor, Var};

use super::ModelError;

/// Named parameter tensors in registration order. Models address their
/// parameters by index, so a store cast to another precision or bound to a
/// graph keeps the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> Default for Params<F> {
    fn default() -> Self {
        Params { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<F: Real> Params<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a model
    /// construction bug.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        let name = name.into();
        let i = self.tensors.len();
        assert!(self.index.insert(name.clone(), i).is_none(), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(t);
        i
    }

    /// Registers a tensor drawn from N(0, 1 / fan_in).
    pub fn push_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> usize {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape.to_vec(), |_| F::lit(std * rng.sample::<f64, _>(StandardNormal)));
        self.push(name, t)
    }

    pub fn push_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> usize {
        self.push(name, Tensor::full(shape.to_vec(), F::lit(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<F> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Places every tensor on `g` as a leaf, in registration order.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names.iter().zip(&self.tensors).filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// CRC32 over names, shapes and values.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for &d in t.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(&v.to_f64().to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Overwrites every tensor from `other` by name. Names and shapes must
    /// match exactly.
    pub fn assign_from(&mut self, other: &Params<F>) -> Result<(), ModelError> {
        if other.len() != self.len() {
            return Err(ModelError::Malformed(format!("expected {} parameters, found {}", self.len(), other.len())));
        }
        for (name, t) in other.names.iter().zip(&other.tensors) {
            let i = self.index_of(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(ModelError::Malformed(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Copies tensors whose name starts with `from` into the slots named
    /// with `to` instead.
    pub fn copy_prefix(&mut self, src: &Params<F>, from: &str, to: &str) -> Result<usize, ModelError> {
        let mut copied = 0;
        for (name, t) in src.names.iter().zip(&src.tensors) {
            if let Some(rest) = name.strip_prefix(from) {
                let target = format!("{to}{rest}");
                let i = self.index_of(&target).ok_or(ModelError::MissingParam(target))?;
                if self.tensors[i].shape() != t.shape() {
                    return Err(ModelError::Malformed(format!("shape mismatch copying `{name}`")));
                }
                self.tensors[i] = t.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }
}
