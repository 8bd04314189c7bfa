//! Composite building blocks on top of the layer primitives.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::ops::{BatchNorm2d, Conv2d, Layer, MaxPool2x2, Mode, Relu};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// conv → batchnorm → relu → 2×2 max-pool. Output spatial size is exactly half the input.
#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu,
    pool: MaxPool2x2,
}

impl<T: Scalar> Stage<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, filters: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Ok(Self::from_conv(Conv2d::new(in_channels, filters, kernel, rng)?))
    }

    pub fn from_conv(conv: Conv2d<T>) -> Self {
        let bn = BatchNorm2d::new(conv.filters());
        Self { conv, bn, relu: Relu::new(), pool: MaxPool2x2::new() }
    }

    /// Every tensor a checkpoint needs, with stable names relative to the stage.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("conv.weight", &self.conv.weight.value),
            ("conv.bias", &self.conv.bias.value),
            ("bn.gamma", &self.bn.gamma.value),
            ("bn.beta", &self.bn.beta.value),
            ("bn.running_mean", &self.bn.running_mean),
            ("bn.running_var", &self.bn.running_var),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("conv.weight", &mut self.conv.weight.value),
            ("conv.bias", &mut self.conv.bias.value),
            ("bn.gamma", &mut self.bn.gamma.value),
            ("bn.beta", &mut self.bn.beta.value),
            ("bn.running_mean", &mut self.bn.running_mean),
            ("bn.running_var", &mut self.bn.running_var),
        ]
    }
}

impl<T: Scalar> Layer<T> for Stage<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 4 || !input.dim(2).is_multiple_of(2) || !input.dim(3).is_multiple_of(2) {
            return Err(shape_err!("stage input must be [N, C, H, W] with even H, W; got {:?}", input.shape()));
        }
        let x = self.conv.forward(input, mode)?;
        let x = self.bn.forward(&x, mode)?;
        let x = self.relu.forward(&x, mode)?;
        self.pool.forward(&x, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.pool.backward(grad_out)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn backward_params(&mut self, grad_out: &Tensor<T>) -> Result<()> {
        let g = self.pool.backward(grad_out)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward_params(&g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.conv.params();
        p.extend(self.bn.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.conv.params_mut();
        p.extend(self.bn.params_mut());
        p
    }

    fn name(&self) -> String {
        format!("stage[{} | {}]", self.conv.name(), self.bn.name())
    }
}
