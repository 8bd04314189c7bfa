use super::{Layer, Mode};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-overlapping 2×2 max pooling. Gradients flow to the first maximum in scan order.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2x2 {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        if input.rank() != 4 {
            return Err(shape_err!("maxpool expects [N, F, H, W], got {:?}", input.shape()));
        }
        let (n, f, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("maxpool2x2 needs even spatial dims, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        self.argmax = vec![0; n * f * oh * ow];
        let src = input.data();
        for p in 0..n * f {
            let base = p * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let cands = [
                        base + 2 * y * w + 2 * x,
                        base + 2 * y * w + 2 * x + 1,
                        base + (2 * y + 1) * w + 2 * x,
                        base + (2 * y + 1) * w + 2 * x + 1,
                    ];
                    let mut best = cands[0];
                    for &c in &cands[1..] {
                        if src[c] > src[best] {
                            best = c;
                        }
                    }
                    let o = (p * oh + y) * ow + x;
                    out.data_mut()[o] = src[best];
                    self.argmax[o] = best;
                }
            }
        }
        self.in_shape = input.shape().to_vec();
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if self.in_shape.is_empty() {
            return Err(shape_err!("maxpool backward before forward"));
        }
        if grad_out.len() != self.argmax.len() {
            return Err(shape_err!("maxpool grad_out {:?}", grad_out.shape()));
        }
        let mut grad_in = Tensor::zeros(&self.in_shape);
        for (&g, &idx) in grad_out.data().iter().zip(&self.argmax) {
            grad_in.data_mut()[idx] += g;
        }
        Ok(grad_in)
    }

    fn name(&self) -> String {
        "maxpool2x2".into()
    }

    fn is_smooth_at(&self, input: &Tensor<T>, index: usize, eps: T) -> bool {
        let (h, w) = (input.dim(2), input.dim(3));
        let plane = index / (h * w);
        let (y, x) = ((index % (h * w)) / w, index % w);
        let base = plane * h * w + (y & !1) * w + (x & !1);
        let window = [base, base + 1, base + w, base + w + 1];
        let v = input.data()[index];
        window.iter().filter(|&&j| j != index).all(|&j| (input.data()[j] - v).abs() > eps + eps)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ops::gradcheck::{finite_difference_check, random_tensor};

    #[test]
    fn single_window() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = MaxPool2x2::new().forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn halves_spatial_dims() {
        let x = Tensor::<f32>::zeros(&[1, 2, 32, 32]);
        let y = MaxPool2x2::new().forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2, 16, 16]);
        assert!(MaxPool2x2::new().forward(&Tensor::<f32>::zeros(&[1, 1, 3, 4]), Mode::Eval).is_err());
    }

    #[test]
    fn matches_window_max_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[2, 3, 8, 8], &mut rng);
        let y = MaxPool2x2::new().forward(&x, Mode::Eval).unwrap();
        for p in 0..6 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.data()[p * 64 + (2 * oy + dy) * 8 + 2 * ox + dx]);
                        }
                    }
                    assert_eq!(y.data()[p * 16 + oy * 4 + ox], m);
                }
            }
        }
    }

    #[test]
    fn ties_route_to_first_in_scan_order() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 5.0, 5.0, 5.0]).unwrap();
        let mut pool = MaxPool2x2::new();
        pool.forward(&x, Mode::Eval).unwrap();
        let g = pool.backward(&Tensor::<f64>::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let x = random_tensor(&[2, 2, 4, 6], &mut rng);
            let err = finite_difference_check(&mut MaxPool2x2::new(), &x, 1e-5, Mode::Train, trial).unwrap();
            assert!(err < 1e-4, "trial {trial}: relative error {err}");
        }
    }
}
