//! Pixel-space preprocessing for the two pathways.

use super::LabeledImage;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// ITU-R 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// `[3, H, W]` RGB → `[1, H, W]` luma. Single-channel input passes through unchanged.
pub fn to_grayscale(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    match image.dim(0) {
        1 => Ok(image.clone()),
        3 => {
            let plane = image.dim(1) * image.dim(2);
            let d = image.data();
            let data = (0..plane).map(|i| LUMA[0] * d[i] + LUMA[1] * d[plane + i] + LUMA[2] * d[2 * plane + i]).collect();
            Tensor::new(&[1, image.dim(1), image.dim(2)], data)
        }
        c => Err(invalid!("grayscale needs 1 or 3 channels, got {c}")),
    }
}

/// Normalized 1-D Gaussian taps of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid!("Gaussian sigma must be positive, got {sigma}"));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / z).collect())
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur of a `[1, H, W]` image, horizontal pass then vertical.
///
/// Symmetric reflection at the borders makes the operator preserve the image mean.
pub fn gaussian_lowpass(gray: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    if gray.rank() != 3 || gray.dim(0) != 1 {
        return Err(invalid!("low-pass expects [1, H, W], got {:?}", gray.shape()));
    }
    let taps = gaussian_kernel(sigma)?;
    let r = (taps.len() / 2) as isize;
    let (h, w) = (gray.dim(1), gray.dim(2));
    let src: Vec<f64> = gray.data().iter().map(|&v| f64::from(v)).collect();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                taps.iter().enumerate().map(|(t, &k)| k * src[y * w + reflect(x as isize + t as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = taps.iter().enumerate().map(|(t, &k)| k * tmp[reflect(y as isize + t as isize - r, h) * w + x]).sum();
            out[y * w + x] = v as f32;
        }
    }
    Tensor::new(gray.shape(), out)
}

/// 1 where the value exceeds `threshold`, else 0.
pub fn binarize(gray: &Tensor<f32>, threshold: f32) -> Result<Tensor<f32>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid!("binarization threshold must lie in (0, 1), got {threshold}"));
    }
    Ok(gray.map(|v| if v > threshold { 1.0 } else { 0.0 }))
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Population statistics over `[C, H, W]` images, accumulated in f64.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        let mut count = 0usize;
        for im in images {
            let c = im.dim(0);
            if sum.is_empty() {
                sum = vec![0.0f64; c];
                sq = vec![0.0f64; c];
            }
            let plane = im.len() / c;
            for ch in 0..c {
                for &v in &im.data()[ch * plane..(ch + 1) * plane] {
                    let v = f64::from(v);
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            count += plane;
        }
        if count == 0 {
            return Self::identity(0);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect::<Vec<_>>();
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: std.iter().map(|&s| if s > 1e-12 { s as f32 } else { 1.0 }).collect(),
        }
    }

    pub fn normalize(&self, image: &Tensor<f32>) -> Tensor<f32> {
        let c = image.dim(0);
        let plane = image.len() / c;
        let mut out = image.clone();
        for ch in 0..c {
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// How raw `[0, 1]` pixels become network input, before normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputPipeline {
    /// Raw channels (FineNet).
    Raw,
    /// Grayscale then Gaussian low-pass (CoarseNet).
    LowPass { sigma: f64 },
    /// Grayscale then threshold (CoarseNet on binarized/mask data).
    Binarize { threshold: f32 },
}

impl InputPipeline {
    pub fn input_channels(&self, raw_channels: usize) -> usize {
        match self {
            Self::Raw => raw_channels,
            _ => 1,
        }
    }

    pub fn apply(&self, pixels: &Tensor<f32>) -> Result<Tensor<f32>> {
        match *self {
            Self::Raw => Ok(pixels.clone()),
            Self::LowPass { sigma } => gaussian_lowpass(&to_grayscale(pixels)?, sigma),
            Self::Binarize { threshold } => binarize(&to_grayscale(pixels)?, threshold),
        }
    }

    /// Applies the pipeline to training images and fits normalization statistics on the result.
    pub fn fit(&self, images: &[LabeledImage]) -> Result<Prepared> {
        let pre: Vec<Tensor<f32>> = images.iter().map(|im| self.apply(&im.pixels)).collect::<Result<_>>()?;
        let stats = ChannelStats::fit(pre.iter());
        Ok(Prepared { pipeline: *self, stats })
    }
}

/// A pipeline together with the training-split normalization statistics of its output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub pipeline: InputPipeline,
    pub stats: ChannelStats,
}

impl Prepared {
    pub fn transform(&self, pixels: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.stats.normalize(&self.pipeline.apply(pixels)?))
    }

    /// Stacks transformed images into an `[N, C, H, W]` batch.
    pub fn batch<'a>(&self, pixels: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Tensor<f32>> {
        let items: Vec<Tensor<f32>> = pixels.into_iter().map(|p| self.transform(p)).collect::<Result<_>>()?;
        Tensor::stack(&items.iter().collect::<Vec<_>>())
    }
}
