use rand::Rng;

use super::{init, Layer, Mode};
use crate::error::{shape_err, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Fully connected layer `y = x·W + b` with `W: [D, M]`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = init::he_normal(&[inputs, outputs], inputs, rng);
        Self::from_params(weight, Tensor::zeros(&[outputs])).expect("consistent shapes")
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.dim(1)] {
            return Err(shape_err!("dense weight {:?} with bias {:?}", weight.shape(), bias.shape()));
        }
        Ok(Self { weight: Param::new(weight), bias: Param::new(bias), input: None })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 2 || input.dim(1) != self.inputs() {
            return Err(shape_err!("dense layer takes [N, {}], got {:?}", self.inputs(), input.shape()));
        }
        let (n, d, m) = (input.dim(0), self.inputs(), self.outputs());
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.bias.value.data());
        }
        gemm_nn(n, d, m, input.data(), self.weight.value.data(), out.data_mut(), true);
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.as_ref().ok_or_else(|| shape_err!("dense backward before forward"))?;
        let (n, d, m) = (input.dim(0), self.inputs(), self.outputs());
        if grad_out.shape() != [n, m] {
            return Err(shape_err!("dense grad_out {:?}, expected [{n}, {m}]", grad_out.shape()));
        }
        gemm_tn(d, n, m, input.data(), grad_out.data(), self.weight.grad.data_mut(), true);
        for i in 0..n {
            for (b, &g) in self.bias.grad.data_mut().iter_mut().zip(grad_out.row(i)) {
                *b += g;
            }
        }
        let mut grad_in = Tensor::zeros(&[n, d]);
        gemm_nt(n, m, d, grad_out.data(), self.weight.value.data(), grad_in.data_mut(), false);
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn name(&self) -> String {
        format!("dense({}->{})", self.inputs(), self.outputs())
    }
}
