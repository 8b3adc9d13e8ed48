use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors in a fixed manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (name, t) in entries {
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ParamSet {
            names,
            tensors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks names and shapes against an architecture manifest.
    pub fn check_manifest(&self, manifest: &[(String, Vec<usize>)]) -> Result<()> {
        if manifest.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                manifest.len(),
                self.len()
            )));
        }
        for ((name, shape), (have, t)) in manifest.iter().zip(self.iter()) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {have} {:?} does not match manifest entry {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Copies every parameter into `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| g.leaf(t.clone(), requires_grad))
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Graph handles for a bound [`ParamSet`], in manifest order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients for each parameter (zeros where none flowed).
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| {
                g.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).len()])
            })
            .collect()
    }
}
