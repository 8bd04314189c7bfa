//! Layer primitives with explicit forward and backward kernels.

mod activation;
mod batchnorm;
mod conv;
mod dense;
pub mod gradcheck;
pub mod init;
mod loss;
mod optim;
mod pool;

pub use activation::{Flatten, Relu};
pub use batchnorm::{BatchNorm2d, BN_EPSILON, BN_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use gradcheck::finite_difference_check;
pub use loss::{one_hot, softmax, softmax_cross_entropy, validate_onehot};
pub use optim::sgd_momentum_step;
pub use pool::MaxPool2x2;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Whether batch statistics are computed from the batch (`Train`) or taken from running averages (`Eval`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable map with optional trainable parameters.
///
/// `forward` caches whatever `backward` needs; `backward` accumulates into the
/// parameter gradients and returns the gradient with respect to the input of the
/// most recent `forward` call.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Accumulates parameter gradients only; layers may skip the input gradient.
    fn backward_params(&mut self, grad_out: &Tensor<T>) -> Result<()> {
        self.backward(grad_out).map(|_| ())
    }

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    fn name(&self) -> String;

    /// False when input coordinate `index` lies within `eps` of a kink, where
    /// central differences are meaningless.
    fn is_smooth_at(&self, _input: &Tensor<T>, _index: usize, _eps: T) -> bool {
        true
    }
}
