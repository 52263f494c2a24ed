use crate::element::Element;
use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Element> ParamSet<T> {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Same names and shapes in another precision.
    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| graph.param(t.clone())).collect()
    }

    /// Registers every parameter as a constant (inference, frozen networks).
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| graph.constant(t.clone())).collect()
    }

    /// Replaces values in place, keeping names; shapes must agree.
    pub fn assign(&mut self, other: &ParamSet<T>) -> Result<()> {
        if other.names != self.names {
            return Err(contract("assign", "parameter names differ"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(contract(
                    "assign",
                    format!("shape {:?} vs {:?}", dst.shape(), src.shape()),
                ));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}
