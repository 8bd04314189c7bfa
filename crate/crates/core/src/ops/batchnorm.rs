use super::{Layer, Mode};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[N, F, H, W]`.
///
/// Running statistics follow `r ← (1 − m)·r + m·batch` with `m = 0.1`; the
/// running variance uses the unbiased batch estimate.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 4 || input.dim(1) != self.channels() {
            return Err(shape_err!("batchnorm over {} channels got {:?}", self.channels(), input.shape()));
        }
        let (n, f) = (input.dim(0), input.dim(1));
        if mode == Mode::Train && n < 2 {
            return Err(invalid!("batchnorm in train mode needs a batch of at least 2, got {n}"));
        }
        let plane = input.dim(2) * input.dim(3);
        let count = n * plane;
        let eps = T::lit(BN_EPSILON);
        let mom = T::lit(BN_MOMENTUM);

        let mut xhat = Tensor::zeros(input.shape());
        let mut inv_std = vec![T::zero(); f];
        for c in 0..f {
            let planes = (0..n).map(|i| &input.data()[(i * f + c) * plane..][..plane]);
            let (mean, var) = match mode {
                Mode::Train => {
                    let m = T::from_usize_lossy(count);
                    let mean = planes.clone().flatten().copied().sum::<T>() / m;
                    let var = planes.flatten().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
                    let unbiased = var * m / (m - T::one());
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = (T::one() - mom) * *rm + mom * mean;
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = (T::one() - mom) * *rv + mom * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[c], self.running_var.data()[c]),
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[c] = is;
            for i in 0..n {
                let off = (i * f + c) * plane;
                let src = &input.data()[off..off + plane];
                let dst = &mut xhat.data_mut()[off..off + plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (s - mean) * is;
                }
            }
        }

        let mut out = xhat.clone();
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        for i in 0..n {
            for c in 0..f {
                let off = (i * f + c) * plane;
                for v in &mut out.data_mut()[off..off + plane] {
                    *v = gamma[c] * *v + beta[c];
                }
            }
        }
        self.cache = Some(Cache { mode, xhat, inv_std });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| shape_err!("batchnorm backward before forward"))?;
        if grad_out.shape() != cache.xhat.shape() {
            return Err(shape_err!("batchnorm grad_out {:?}", grad_out.shape()));
        }
        let (n, f) = (grad_out.dim(0), grad_out.dim(1));
        let plane = grad_out.dim(2) * grad_out.dim(3);
        let m = T::from_usize_lossy(n * plane);
        let mut grad_in = Tensor::zeros(grad_out.shape());
        for c in 0..f {
            let gamma = self.gamma.value.data()[c];
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for i in 0..n {
                let off = (i * f + c) * plane;
                for (&dy, &xh) in grad_out.data()[off..off + plane].iter().zip(&cache.xhat.data()[off..off + plane]) {
                    sum_dy += dy;
                    sum_dy_xhat += dy * xh;
                }
            }
            self.gamma.grad.data_mut()[c] += sum_dy_xhat;
            self.beta.grad.data_mut()[c] += sum_dy;
            let is = cache.inv_std[c];
            for i in 0..n {
                let off = (i * f + c) * plane;
                let dy = &grad_out.data()[off..off + plane];
                let xh = &cache.xhat.data()[off..off + plane];
                let dx = &mut grad_in.data_mut()[off..off + plane];
                match cache.mode {
                    Mode::Train => {
                        for ((d, &g), &x) in dx.iter_mut().zip(dy).zip(xh) {
                            *d = gamma * is * (m * g - sum_dy - x * sum_dy_xhat) / m;
                        }
                    }
                    Mode::Eval => {
                        for (d, &g) in dx.iter_mut().zip(dy) {
                            *d = gamma * is * g;
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn name(&self) -> String {
        format!("batchnorm({})", self.channels())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ops::gradcheck::{finite_difference_check, random_tensor};

    fn channel_means(t: &Tensor<f64>) -> Vec<f64> {
        let (n, f) = (t.dim(0), t.dim(1));
        let plane = t.dim(2) * t.dim(3);
        (0..f)
            .map(|c| {
                let s: f64 = (0..n).flat_map(|i| &t.data()[(i * f + c) * plane..][..plane]).sum();
                s / (n * plane) as f64
            })
            .collect()
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::full(&[3, 2, 2, 2], 4.5);
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardizes_then_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bn = BatchNorm2d::<f64>::new(3);
        bn.beta.value.fill(5.0);
        let x = random_tensor(&[4, 3, 3, 3], &mut rng).map(|v| 3.0 * v + 2.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for m in channel_means(&y) {
            assert!((m - 5.0).abs() < 1e-9);
        }
        bn.beta.value.fill(0.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let sq = y.map(|v| v * v);
        for v in channel_means(&sq) {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_f64(&[2, 1, 1, 2], &[1.0, 3.0, 1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance 4/3, blended 0.9·1 + 0.1·4/3
        assert!((bn.running_var.data()[0] - (0.9 + 0.4 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean.fill(1.0);
        bn.running_var.fill(4.0);
        let x = Tensor::from_f64(&[1, 1, 1, 2], &[1.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!(y.data()[0].abs() < 1e-12);
        assert!((y.data()[1] - 2.0 / (4.0 + BN_EPSILON).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let mut bn = BatchNorm2d::<f32>::new(1);
        assert!(bn.forward(&Tensor::zeros(&[1, 1, 2, 2]), Mode::Train).is_err());
        assert!(bn.forward(&Tensor::zeros(&[1, 1, 2, 2]), Mode::Eval).is_ok());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let mut bn = BatchNorm2d::<f64>::new(2);
            bn.gamma.value = random_tensor(&[2], &mut rng);
            bn.beta.value = random_tensor(&[2], &mut rng);
            let x = random_tensor(&[4, 2, 3, 3], &mut rng);
            for mode in [Mode::Train, Mode::Eval] {
                let err = finite_difference_check(&mut bn, &x, 1e-5, mode, trial).unwrap();
                assert!(err < 1e-4, "trial {trial} {mode:?}: relative error {err}");
            }
        }
    }
}
