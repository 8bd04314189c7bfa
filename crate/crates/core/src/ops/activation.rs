use super::{Layer, Mode};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`; the subgradient at 0 is 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.mask = input.data().iter().map(|&v| v > T::zero()).collect();
        self.shape = input.shape().to_vec();
        Ok(input.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != self.shape.as_slice() {
            return Err(shape_err!("relu grad_out {:?}, expected {:?}", grad_out.shape(), self.shape));
        }
        let mut g = grad_out.clone();
        for (v, &m) in g.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = T::zero();
            }
        }
        Ok(g)
    }

    fn name(&self) -> String {
        "relu".into()
    }

    fn is_smooth_at(&self, input: &Tensor<T>, index: usize, eps: T) -> bool {
        input.data()[index].abs() > eps
    }
}

/// Reshapes `[N, ...]` into `[N, D]`.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    shape: Vec<usize>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.shape = input.shape().to_vec();
        let n = input.dim(0);
        input.clone().reshape(&[n, input.len() / n])
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        grad_out.clone().reshape(&self.shape)
    }

    fn name(&self) -> String {
        "flatten".into()
    }
}
