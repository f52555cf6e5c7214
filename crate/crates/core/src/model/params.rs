use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelError;
use crate::tensor::{Float, ParamId, Tensor};

/// Embedding tables are sparse; every other learnable tensor is dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Sparse,
    Dense,
}

impl ParamKind {
    pub fn tag(self) -> u8 {
        match self {
            ParamKind::Sparse => 0,
            ParamKind::Dense => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ParamKind::Sparse),
            1 => Some(ParamKind::Dense),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Float> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Named learnable tensors, addressed by [`ParamId`] in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Float> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, mut tensor: Tensor<T>) -> Result<ParamId, ModelError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(ModelError::Config(format!("duplicate parameter `{name}`")));
        }
        tensor.set_requires_grad(true);
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, kind, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self, kind: ParamKind) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.kind == kind).map(|(id, _)| id).collect()
    }

    /// Number of scalar values of the given kind.
    pub fn count(&self, kind: ParamKind) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Copies of every tensor of one kind, keyed by id.
    pub fn snapshot(&self, kind: ParamKind) -> Vec<(ParamId, Tensor<T>)> {
        self.iter()
            .filter(|(_, p)| p.kind == kind)
            .map(|(id, p)| (id, Tensor::new(p.tensor.shape(), p.tensor.data().to_vec()).expect("same shape")))
            .collect()
    }
}

/// Normal(0, std²) truncated to ±2·std by resampling.
pub fn truncated_normal<R: Rng, T: Float>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break T::of(z * std);
        }
    })
}
