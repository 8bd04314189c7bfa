use crate::scalar::Scalar;
use crate::tensor::Param;

/// One SGD-with-momentum update: `v ← μ·v + g`, `θ ← θ − η·v`, then gradients are cleared.
pub fn sgd_momentum_step<T: Scalar>(params: &mut [&mut Param<T>], lr: T, momentum: T) {
    for p in params.iter_mut() {
        let Param { value, grad, velocity } = &mut **p;
        for ((v, g), vel) in value.data_mut().iter_mut().zip(grad.data_mut()).zip(velocity.data_mut()) {
            *vel = momentum * *vel + *g;
            *v -= lr * *vel;
            *g = T::zero();
        }
    }
}
