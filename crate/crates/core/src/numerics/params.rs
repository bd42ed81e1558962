//! Named parameter storage.
//!
//! A [`ParamSet`] owns every trainable tensor of a model. Tensors are
//! addressed by the [`ParamId`] handed out at insertion time, which is what
//! the tape records instead of copying tensor contents onto itself.

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Matrix) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.names.push(name.into());
        self.tensors.push(tensor);
        id
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Per-tensor L2 norms, used in numerical-abort diagnostics.
    pub fn l2_norms(&self) -> Vec<(String, f64)> {
        self.iter().map(|(n, t)| (n.to_string(), t.l2_norm())).collect()
    }

    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.round_to_f32();
        }
    }
}

/// Dense gradient storage mirroring a [`ParamSet`]. Tensors a backward pass
/// never touched stay at zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            tensors: params
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.tensors.iter()
    }

    /// Fails if any gradient entry is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (i, t) in self.tensors.iter().enumerate() {
            if t.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in tensor {i}"
                )));
            }
        }
        Ok(())
    }
}
