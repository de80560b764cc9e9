//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: a [`Tape`] records every operation,
//! `backward` walks it in reverse insertion order, and [`Parameter`] /
//! [`ParamSet`] hold the learnable state consumed by [`AdamW`]. Everything
//! runs in 64-bit floats so analytic gradients can be checked against
//! central finite differences.

#[cfg(test)]
mod tests;

mod adamw;
mod gradcheck;
mod param;
mod tape;

pub use adamw::AdamW;
pub use gradcheck::{check_backward_vs_fd, random_data, GradCheckReport};
pub use param::{GradBuffer, ParamId, ParamSet, Parameter};
pub use tape::{Reduction, Tape, TapeGrads, TensorId};

use std::fmt;
use std::sync::Arc;

/// Errors produced by tensor construction, tape operations and the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// The flat data length does not match the product of the dims.
    DataShapeMismatch { shape: Vec<usize>, data_len: usize },
    /// Two operands have incompatible shapes; both are reported.
    DimMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A non-finite value (NaN) reached an op that requires finite input.
    NonFinite { op: &'static str },
    /// An op received an empty input it cannot reduce.
    EmptyInput { op: &'static str },
    /// `backward` was called on a non-scalar tensor.
    NonScalarLoss { shape: Vec<usize> },
    /// An invalid hyperparameter (e.g. non-positive learning rate).
    InvalidHyper { what: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataShapeMismatch { shape, data_len } => {
                write!(f, "shape {shape:?} implies {} elements, data has {data_len}", shape.iter().product::<usize>())
            }
            TensorError::DimMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} vs {right:?}")
            }
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite input"),
            TensorError::EmptyInput { op } => write!(f, "{op}: empty input"),
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::InvalidHyper { what } => write!(f, "invalid hyperparameter: {what}"),
        }
    }
}

impl std::error::Error for TensorError {}

/// A dense n-dimensional array of f64 values.
///
/// Tensors are plain values; gradient tracking happens on the [`Tape`] once a
/// tensor is staged as a leaf. `tape_id` is populated on tensors extracted
/// from a tape and `None` on detached ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    pub requires_grad: bool,
    pub tape_id: Option<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataShapeMismatch { shape: shape.to_vec(), data_len: data.len() });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            tape_id: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel]),
            requires_grad: false,
            tape_id: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![v], &[1]).expect("scalar shape")
    }

    /// Build a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(TensorError::DimMismatch { op: "from_rows", left: vec![n, d], right: vec![r.len()] });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(data, &[n, d])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn data_mut(&mut self) -> &mut Arc<Vec<f64>> {
        &mut self.data
    }
}

