//! Learnable parameters, their gradient accumulators and the per-batch
//! gradient buffers used for deterministic parallel reduction.

use std::sync::Arc;

use super::{Tensor, TensorError};

/// Stable slot of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A named learnable tensor with its gradient and AdamW moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        let mut value = value;
        value.requires_grad = true;
        Parameter {
            name: name.into(),
            value,
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Ordered collection of parameters. Registration order is the canonical
/// order used for checkpoints and gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Parameter::new(name, value));
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, buf: &GradBuffer) {
        assert_eq!(buf.grads.len(), self.params.len(), "grad buffer does not match param set");
        for (p, g) in self.params.iter_mut().zip(&buf.grads) {
            for (pg, bg) in p.grad.iter_mut().zip(g) {
                *pg += bg;
            }
        }
    }

    /// Overwrite a parameter's values, e.g. when loading a checkpoint.
    pub fn set_value(&mut self, id: ParamId, data: Vec<f64>) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if data.len() != p.numel() {
            return Err(TensorError::DataShapeMismatch { shape: p.value.shape().to_vec(), data_len: data.len() });
        }
        let shape = p.value.shape().to_vec();
        p.value = Tensor::new(data, &shape)?.with_grad();
        Ok(())
    }

    pub(crate) fn value_data_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        let p = &mut self.params[id.0];
        Arc::make_mut(&mut p.value.data)
    }

    /// Total number of scalar values across all parameters.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// L2 norm over every parameter gradient.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-parameter gradients detached from the [`ParamSet`], so that scene
/// gradients can be computed in parallel and reduced in a fixed order.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(set: &ParamSet) -> Self {
        GradBuffer { grads: set.params.iter().map(|p| vec![0.0; p.numel()]).collect() }
    }

    pub fn add_to(&mut self, id: ParamId, g: &[f64]) {
        let slot = &mut self.grads[id.0];
        assert_eq!(slot.len(), g.len());
        for (a, b) in slot.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Scale gradients down so the global norm does not exceed `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
