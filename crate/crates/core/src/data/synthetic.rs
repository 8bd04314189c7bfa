//! Procedurally generated datasets in the CIFAR binary layouts.
//!
//! Each class couples a global shape (visible after heavy blurring) with a fine
//! oriented texture and a hue (visible only at full resolution). Position,
//! scale, rotation, contrast polarity, background and clutter are random per image.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cifar::{
    encode_cifar10, encode_cifar100, CIFAR100_TEST_FILE, CIFAR100_TRAIN_FILE, CIFAR10_TEST_FILE, CIFAR10_TRAIN_FILES,
};
use super::{LabeledImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, item_seed};
use crate::tensor::Tensor;

pub const SHAPE_NAMES: [&str; 10] =
    ["disc", "ring", "square", "triangle", "plus", "bar", "pillars", "diamond", "ell", "dumbbell"];

/// Super-classes and sub-classes per super-class in the CIFAR-100 layout.
pub const FAMILIES: usize = 8;
pub const VARIANTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

/// Appearance parameters that define one class.
#[derive(Clone, Copy, Debug)]
struct ClassLook {
    shape: usize,
    orientation: f32,
    period: f32,
    hue: f32,
}

fn inside(shape: usize, u: f32, v: f32) -> bool {
    let r2 = u * u + v * v;
    match shape {
        0 => r2 < 0.64,
        1 => (0.25..0.81).contains(&r2),
        2 => u.abs().max(v.abs()) < 0.7,
        3 => v < 0.6 && u.abs() < (v + 0.8) * 0.6,
        4 => (u.abs() < 0.25 && v.abs() < 0.85) || (v.abs() < 0.25 && u.abs() < 0.85),
        5 => v.abs() < 0.3 && u.abs() < 0.95,
        6 => (u.abs() - 0.5).abs() < 0.2 && v.abs() < 0.85,
        7 => u.abs() + v.abs() < 0.9,
        8 => ((-0.7..-0.2).contains(&u) && v.abs() < 0.8) || ((0.3..0.8).contains(&v) && u.abs() < 0.7),
        _ => (u + 0.5).powi(2) + v * v < 0.16 || (u - 0.5).powi(2) + v * v < 0.16,
    }
}

fn render(look: ClassLook, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = IMAGE_SIZE;
    let base = rng.random_range(0.25f32..0.75);
    let tint: [f32; 3] = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    let grad_dir = rng.random_range(0.0..2.0 * PI);
    let grad = rng.random_range(-0.15f32..0.15);

    let cx = n as f32 / 2.0 + rng.random_range(-4.0f32..4.0);
    let cy = n as f32 / 2.0 + rng.random_range(-4.0f32..4.0);
    let scale = rng.random_range(10.0f32..13.0);
    let rot = rng.random_range(-0.25f32..0.25);
    let polarity = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let lum = (base + polarity * rng.random_range(0.25f32..0.4)).clamp(0.05, 0.95);
    let hue = look.hue + rng.random_range(-PI / 5.0..PI / 5.0);
    let fg: [f32; 3] = [0.0, 2.0 * PI / 3.0, -2.0 * PI / 3.0].map(|off| lum + 0.12 * (hue - off).cos());
    let theta = look.orientation + rng.random_range(-0.1f32..0.1);
    let phase = rng.random_range(0.0..2.0 * PI);

    let blobs: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.0..n as f32),
                rng.random_range(0.0..n as f32),
                rng.random_range(1.5f32..3.0),
                rng.random_range(0.0f32..1.0),
            )
        })
        .collect();

    let (sin_r, cos_r) = rot.sin_cos();
    let (sin_t, cos_t) = theta.sin_cos();
    let mut data = vec![0.0f32; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut cover = 0.0;
            for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let (dx, dy) = (xf + sx - cx, yf + sy - cy);
                let u = (dx * cos_r + dy * sin_r) / scale;
                let v = (-dx * sin_r + dy * cos_r) / scale;
                if inside(look.shape, u, v) {
                    cover += 0.25;
                }
            }
            let ramp = grad * ((xf - 16.0) * grad_dir.cos() + (yf - 16.0) * grad_dir.sin()) / 16.0;
            let stripe = 0.12 * (2.0 * PI * (xf * cos_t + yf * sin_t) / look.period + phase).sin().signum();
            let blob = blobs.iter().find(|(bx, by, br, _)| (xf - bx).powi(2) + (yf - by).powi(2) < br * br);
            for c in 0..3 {
                let bg = base + tint[c] + ramp;
                let mut v = bg + cover * (fg[c] + stripe - bg);
                if let Some(&(_, _, _, shade)) = blob {
                    v = shade;
                }
                v += rng.random_range(-0.02f32..0.02);
                data[c * n * n + y * n + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[3, n, n], data).expect("fixed image size")
}

fn cifar10_look(class: usize) -> ClassLook {
    ClassLook {
        shape: class,
        orientation: class as f32 * PI / 10.0,
        period: 2.5 + 0.25 * (class % 3) as f32,
        hue: 2.0 * PI * class as f32 / 10.0,
    }
}

fn cifar100_look(family: usize, variant: usize) -> ClassLook {
    ClassLook {
        shape: family,
        orientation: variant as f32 * PI / VARIANTS as f32,
        period: 2.5 + 0.5 * (variant % 2) as f32,
        hue: 2.0 * PI * variant as f32 / VARIANTS as f32,
    }
}

/// Images interleaved by class (`i % classes`), so any prefix is near-balanced.
fn generate(
    classes: usize,
    per_class: usize,
    seed: u64,
    look: impl Fn(usize) -> ClassLook,
    coarse: impl Fn(usize) -> Option<usize>,
) -> Vec<LabeledImage> {
    (0..classes * per_class)
        .map(|i| {
            let class = i % classes;
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, i));
            LabeledImage { pixels: render(look(class), &mut rng), fine_label: class, coarse_label: coarse(class) }
        })
        .collect()
}

/// Ten classes, one per shape.
pub fn cifar10_like(cfg: &SyntheticConfig) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let make = |n, label| generate(10, n, derive_seed(cfg.seed, label), cifar10_look, |_| None);
    (make(cfg.train_per_class, "synthetic/train"), make(cfg.test_per_class, "synthetic/test"))
}

/// `FAMILIES × VARIANTS` classes; fine label `family·VARIANTS + variant`, coarse label `family`.
pub fn cifar100_like(cfg: &SyntheticConfig) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let classes = FAMILIES * VARIANTS;
    let make = |n, label| {
        generate(classes, n, derive_seed(cfg.seed, label), |c| cifar100_look(c / VARIANTS, c % VARIANTS), |c| Some(c / VARIANTS))
    };
    (make(cfg.train_per_class, "synthetic100/train"), make(cfg.test_per_class, "synthetic100/test"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes a CIFAR-10 style archive (five training batches, one test batch) into `dir`.
pub fn write_cifar10(dir: &Path, cfg: &SyntheticConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (train, test) = cifar10_like(cfg);
    let chunk = train.len().div_ceil(CIFAR10_TRAIN_FILES.len()).max(1);
    let mut parts = train.chunks(chunk);
    for name in CIFAR10_TRAIN_FILES {
        write(&dir.join(name), &encode_cifar10(parts.next().unwrap_or(&[])))?;
    }
    write(&dir.join(CIFAR10_TEST_FILE), &encode_cifar10(&test))?;
    write(&dir.join("batches.meta.txt"), SHAPE_NAMES.join("\n").as_bytes())
}

/// Writes a CIFAR-100 style archive with `FAMILIES` super-classes into `dir`.
pub fn write_cifar100(dir: &Path, cfg: &SyntheticConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (train, test) = cifar100_like(cfg);
    write(&dir.join(CIFAR100_TRAIN_FILE), &encode_cifar100(&train))?;
    write(&dir.join(CIFAR100_TEST_FILE), &encode_cifar100(&test))?;
    let fine: Vec<String> = (0..FAMILIES * VARIANTS).map(|c| format!("{}_{}", SHAPE_NAMES[c / VARIANTS], c % VARIANTS)).collect();
    write(&dir.join("fine_label_names.txt"), fine.join("\n").as_bytes())?;
    write(&dir.join("coarse_label_names.txt"), SHAPE_NAMES[..FAMILIES].join("\n").as_bytes())
}
