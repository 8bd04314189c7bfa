//! Pixel-space corruptions: uniform noise, salt-and-pepper, and FGSM.
//!
//! All of them act on raw `[0, 1]` RGB images before any pathway preprocessing.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{InputPipeline, Prepared};
use crate::error::{invalid, Result};
use crate::ops::{one_hot, softmax_cross_entropy, Mode};
use crate::pathways::Network;
use crate::rng::{derive_seed, item_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Uniform,
    SaltPepper,
    Fgsm,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::SaltPepper => "salt_pepper",
            Self::Fgsm => "fgsm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "salt_pepper" | "salt-pepper" | "sp" => Ok(Self::SaltPepper),
            "fgsm" => Ok(Self::Fgsm),
            _ => Err(invalid!("unknown noise kind {s:?}")),
        }
    }
}

/// A corruption and its strength: `U`, the replaced proportion, or `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, level: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind, level, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            NoiseKind::SaltPepper => (0.0..=1.0).contains(&self.level),
            _ => self.level >= 0.0 && self.level.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("{} level {} out of range", self.kind.as_str(), self.level))
        }
    }

    /// Generator for the image at `index`; independent of every other image.
    pub fn rng_for(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(item_seed(derive_seed(self.seed, self.kind.as_str()), index))
    }

    /// Applies a stochastic corruption to each image. FGSM needs a network; use [`fgsm`].
    pub fn corrupt(&self, images: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        self.validate()?;
        images
            .iter()
            .enumerate()
            .map(|(i, im)| {
                let mut rng = self.rng_for(i);
                match self.kind {
                    NoiseKind::Uniform => add_uniform(im, self.level as f32, &mut rng),
                    NoiseKind::SaltPepper => add_salt_pepper(im, self.level, &mut rng),
                    NoiseKind::Fgsm => Err(invalid!("FGSM needs the attacked network")),
                }
            })
            .collect()
    }
}

/// Adds independent `Uniform[−U, U]` noise to every value and clips to `[0, 1]`.
pub fn add_uniform<R: Rng + ?Sized>(image: &Tensor<f32>, u: f32, rng: &mut R) -> Result<Tensor<f32>> {
    if !(u >= 0.0) {
        return Err(invalid!("uniform noise width must be non-negative, got {u}"));
    }
    if u == 0.0 {
        return Ok(image.clone());
    }
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + rng.random_range(-u..=u)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Replaces `round(p·H·W)` whole pixels, chosen uniformly, with black or white (even odds).
pub fn add_salt_pepper<R: Rng + ?Sized>(image: &Tensor<f32>, p: f64, rng: &mut R) -> Result<Tensor<f32>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid!("salt-and-pepper proportion must lie in [0, 1], got {p}"));
    }
    let (c, plane) = (image.dim(0), image.len() / image.dim(0));
    let count = (p * plane as f64).round() as usize;
    let mut out = image.clone();
    for pos in sample(rng, plane, count).into_iter() {
        let v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        for ch in 0..c {
            out.data_mut()[ch * plane + pos] = v;
        }
    }
    Ok(out)
}

/// Cross-entropy and its gradient with respect to the (normalized) network input.
pub fn input_gradient<T: Scalar>(net: &mut Network<T>, inputs: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let y = one_hot(labels, net.spec().num_classes)?;
    let (_, logits) = net.forward(inputs, Mode::Eval)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, &y)?;
    let grad = net.backward(&d_logits, None, true)?.expect("input gradient requested");
    net.zero_grad();
    Ok((loss, grad))
}

/// One signed-gradient step of size `ε` in raw pixel space against `net`, clipped to `[0, 1]`.
///
/// Normalization divides by a positive per-channel scale, so the sign of the gradient
/// with respect to raw pixels equals the sign with respect to the network input.
pub fn fgsm<T: Scalar>(
    net: &mut Network<T>,
    prepared: &Prepared,
    images: &[Tensor<f32>],
    labels: &[usize],
    epsilon: f64,
    batch_size: usize,
) -> Result<Vec<Tensor<f32>>> {
    if !(epsilon >= 0.0) {
        return Err(invalid!("FGSM epsilon must be non-negative, got {epsilon}"));
    }
    if prepared.pipeline != InputPipeline::Raw {
        return Err(invalid!("FGSM is defined on the raw RGB pathway"));
    }
    if epsilon == 0.0 {
        return Ok(images.to_vec());
    }
    let eps = epsilon as f32;
    let mut out = Vec::with_capacity(images.len());
    for (chunk, chunk_labels) in images.chunks(batch_size.max(1)).zip(labels.chunks(batch_size.max(1))) {
        let x = prepared.batch(chunk)?.cast::<T>();
        let (_, grad) = input_gradient(net, &x, chunk_labels)?;
        for (i, im) in chunk.iter().enumerate() {
            let g = grad.row(i);
            let mut adv = im.clone();
            for (v, &gi) in adv.data_mut().iter_mut().zip(g) {
                let step = if gi > T::zero() {
                    eps
                } else if gi < T::zero() {
                    -eps
                } else {
                    0.0
                };
                *v = (*v + step).clamp(0.0, 1.0);
            }
            out.push(adv);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ChannelStats;
    use crate::pathways::{NetworkSpec, PathwayKind};

    fn gray_image(v: f32) -> Tensor<f32> {
        Tensor::full(&[3, 8, 8], v)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn zero_levels_are_identity() {
        let im = Tensor::from_fn(&[3, 8, 8], |i| (i % 11) as f32 / 10.0);
        assert_eq!(add_uniform(&im, 0.0, &mut rng()).unwrap(), im);
        assert_eq!(add_salt_pepper(&im, 0.0, &mut rng()).unwrap(), im);
    }

    #[test]
    fn uniform_is_zero_mean_and_bounded() {
        let im = Tensor::full(&[1, 100, 1000], 0.5f32);
        let out = add_uniform(&im, 0.5, &mut rng()).unwrap();
        let shift = out.data().iter().map(|&v| f64::from(v) - 0.5).sum::<f64>() / 1e5;
        assert!(shift.abs() < 0.01, "mean shift {shift}");
        let small = add_uniform(&im, 0.01, &mut rng()).unwrap();
        assert!(small.max_abs_diff(&im) <= 0.01 + 1e-7);
    }

    #[test]
    fn salt_pepper_replaces_whole_pixels() {
        let im = gray_image(0.5);
        let out = add_salt_pepper(&im, 0.3, &mut rng()).unwrap();
        let plane = 64;
        let mut changed = 0;
        for pos in 0..plane {
            let px: Vec<f32> = (0..3).map(|c| out.data()[c * plane + pos]).collect();
            if px[0] != 0.5 {
                changed += 1;
                assert!(px.iter().all(|&v| v == px[0]) && (px[0] == 0.0 || px[0] == 1.0));
            }
        }
        assert_eq!(changed, (0.3f64 * 64.0).round() as usize);
        let full = add_salt_pepper(&im, 1.0, &mut rng()).unwrap();
        assert!(full.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn rejects_bad_levels() {
        assert!(add_uniform(&gray_image(0.5), -0.1, &mut rng()).is_err());
        assert!(add_salt_pepper(&gray_image(0.5), 1.2, &mut rng()).is_err());
        assert!(NoiseSpec::new(NoiseKind::Fgsm, -1.0, 0).is_err());
        assert!(NoiseSpec::new(NoiseKind::SaltPepper, 0.5, 0).is_ok());
    }

    #[test]
    fn same_seed_same_corruption() {
        let ims: Vec<_> = (0..4).map(|i| gray_image(i as f32 / 4.0)).collect();
        for kind in [NoiseKind::Uniform, NoiseKind::SaltPepper] {
            let spec = NoiseSpec::new(kind, 0.5, 9).unwrap();
            let a = spec.corrupt(&ims).unwrap();
            assert_eq!(a, spec.corrupt(&ims).unwrap());
            assert_ne!(a[1], spec.corrupt(&ims[1..]).unwrap()[0], "seed depends on image index");
            assert!(a.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }

    fn tiny_net() -> (Network<f64>, Prepared) {
        let spec = NetworkSpec {
            kind: PathwayKind::Fine,
            stages: vec![(3, 3)],
            fc_width: 5,
            num_classes: 3,
            input_channels: 3,
            input_size: 8,
        };
        let stats = ChannelStats { mean: vec![0.4, 0.5, 0.6], std: vec![0.2, 0.25, 0.3] };
        (Network::build(&spec, 3).unwrap(), Prepared { pipeline: InputPipeline::Raw, stats })
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let (mut net, prep) = tiny_net();
        let ims = vec![gray_image(0.3)];
        assert_eq!(fgsm(&mut net, &prep, &ims, &[1], 0.0, 4).unwrap(), ims);
        assert!(fgsm(&mut net, &prep, &ims, &[1], -0.1, 4).is_err());
    }

    #[test]
    fn fgsm_signs_match_finite_differences() {
        let (mut net, prep) = tiny_net();
        let mut r = rng();
        let im = Tensor::from_fn(&[3, 8, 8], |_| r.random_range(0.1f32..0.9));
        let label = 2;
        let eps = 0.01;
        let adv = fgsm(&mut net, &prep, std::slice::from_ref(&im), &[label], eps, 1).unwrap().remove(0);
        let loss = |pixels: &Tensor<f32>| -> f64 {
            let x = prep.batch([pixels]).unwrap().cast::<f64>();
            let y = one_hot(&[label], 3).unwrap();
            softmax_cross_entropy(&net.clone().forward(&x, Mode::Eval).unwrap().1, &y).unwrap().0
        };
        let (mut agree, mut counted) = (0, 0);
        let h = 1e-3f32;
        for i in 0..im.len() {
            let mut up = im.clone();
            up.data_mut()[i] += h;
            let mut down = im.clone();
            down.data_mut()[i] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * f64::from(h));
            if fd.abs() > 1e-6 {
                counted += 1;
                if (adv.data()[i] - im.data()[i]).signum() == fd.signum() as f32 {
                    agree += 1;
                }
            }
        }
        assert!(counted > 100);
        assert!(agree as f64 >= 0.99 * counted as f64, "{agree}/{counted}");
    }
}
