//! Differentiable primitives with hand-written backward passes, a
//! finite-difference gradient checker, and Adam with an exponentially
//! decaying learning rate.
//!
//! There is no tape: each forward function has a matching `*_backward`
//! that takes whatever the forward pass produced plus the upstream gradient.
//! All arithmetic is `f64`.

mod adam;
mod gradcheck;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error};
pub use ops::{
    apply_dropout, apply_linear, apply_relu, cosine_similarity, cosine_similarity_backward,
    l2_normalize, l2_normalize_backward, linear_backward, relu_backward, sigmoid,
    softmax_cross_entropy, DropoutMask, EPS_NORM,
};

use crate::error::{shape, Result};

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(shape_err(&name, &shape, values.len()));
        }
        let grad = vec![0.0; values.len()];
        Ok(Self {
            name,
            shape,
            values,
            grad,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn shape_err(name: &str, dims: &[usize], got: usize) -> crate::Error {
    shape(format!(
        "tensor {name} with shape {dims:?} cannot hold {got} values"
    ))
}
