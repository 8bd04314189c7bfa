//! Central finite-difference gradient checks for layers and scalar functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode};
use crate::error::Result;
use crate::tensor::Tensor;

/// Uniform values in `[-1, 1)`.
pub fn random_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Relative error of `analytic` against the central difference of `up` and `down`.
///
/// The part of `|a − n|` within the rounding error of `up − down` is not
/// counted, so gradients that vanish identically (a conv bias feeding batch
/// norm) do not report `roundoff / 1e-8`.
pub fn difference_error(analytic: f64, up: f64, down: f64, eps: f64) -> f64 {
    let numeric = (up - down) / (2.0 * eps);
    let roundoff = 8.0 * f64::EPSILON * (up.abs() + down.abs()).max(1.0) / (2.0 * eps);
    let excess = ((analytic - numeric).abs() - roundoff).max(0.0);
    excess / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between `grad` and central differences of `f` around `x`.
pub fn central_difference_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64], eps: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(difference_error(grad[i], up, down, eps));
    }
    worst
}

fn projected_loss(layer: &mut dyn Layer<f64>, input: &Tensor<f64>, mode: Mode, weights: &Tensor<f64>) -> Result<f64> {
    let out = layer.forward(input, mode)?;
    Ok(out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

/// Compares a layer's analytic gradients against central differences.
///
/// The scalar objective is a fixed random projection of the layer output. The
/// result is the maximum relative error over every input coordinate and every
/// parameter entry; input coordinates within `eps` of a kink are skipped.
pub fn finite_difference_check(layer: &mut dyn Layer<f64>, input: &Tensor<f64>, eps: f64, mode: Mode, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let out = layer.forward(input, mode)?;
    let proj = random_tensor(out.shape(), &mut rng);

    for p in layer.params_mut() {
        p.zero_grad();
    }
    layer.forward(input, mode)?;
    let grad_in = layer.backward(&proj)?;
    let param_grads: Vec<Tensor<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    let mut probe = input.clone();
    for i in 0..input.len() {
        if !layer.is_smooth_at(input, i, eps) {
            continue;
        }
        let x0 = input.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = projected_loss(layer, &probe, mode, &proj)?;
        probe.data_mut()[i] = x0 - eps;
        let down = projected_loss(layer, &probe, mode, &proj)?;
        probe.data_mut()[i] = x0;
        worst = worst.max(difference_error(grad_in.data()[i], up, down, eps));
    }

    for (pi, analytic) in param_grads.iter().enumerate() {
        for j in 0..analytic.len() {
            let x0 = layer.params()[pi].value.data()[j];
            layer.params_mut()[pi].value.data_mut()[j] = x0 + eps;
            let up = projected_loss(layer, input, mode, &proj)?;
            layer.params_mut()[pi].value.data_mut()[j] = x0 - eps;
            let down = projected_loss(layer, input, mode, &proj)?;
            layer.params_mut()[pi].value.data_mut()[j] = x0;
            worst = worst.max(difference_error(analytic.data()[j], up, down, eps));
        }
    }
    Ok(worst)
}
