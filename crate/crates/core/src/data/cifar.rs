//! CIFAR-10 / CIFAR-100 binary readers.
//!
//! CIFAR-10 records are 3073 bytes (label, then 3072 channel-planar R, G, B bytes);
//! CIFAR-100 records are 3074 bytes (coarse label, fine label, pixels).

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetSplit, LabeledImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PIXEL_BYTES: usize = 3 * IMAGE_SIZE * IMAGE_SIZE;
pub const CIFAR10_RECORD: usize = 1 + PIXEL_BYTES;
pub const CIFAR100_RECORD: usize = 2 + PIXEL_BYTES;

pub const CIFAR10_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR100_TRAIN_FILE: &str = "train.bin";
pub const CIFAR100_TEST_FILE: &str = "test.bin";

/// Train and test splits; the test split carries the training statistics.
#[derive(Clone, Debug)]
pub struct CifarSplits {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    /// Super-class names (CIFAR-100 only).
    pub coarse_names: Vec<String>,
}

fn pixels_from_bytes(bytes: &[u8]) -> Tensor<f32> {
    let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::new(&[3, IMAGE_SIZE, IMAGE_SIZE], data).expect("fixed record size")
}

fn check_records(bytes: &[u8], record: usize, what: &str) -> Result<usize> {
    if bytes.is_empty() {
        return Err(Error::Format(format!("{what}: empty file")));
    }
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Format(format!(
            "{what}: truncated ({} bytes is not a whole number of {record}-byte records)",
            bytes.len()
        )));
    }
    Ok(bytes.len() / record)
}

/// Parses one CIFAR-10 batch file.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    check_records(bytes, CIFAR10_RECORD, "cifar-10 batch")?;
    bytes
        .chunks_exact(CIFAR10_RECORD)
        .map(|rec| {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::Format(format!("cifar-10 label {label} out of range")));
            }
            Ok(LabeledImage { pixels: pixels_from_bytes(&rec[1..]), fine_label: label, coarse_label: None })
        })
        .collect()
}

/// Parses one CIFAR-100 file.
pub fn parse_cifar100(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    check_records(bytes, CIFAR100_RECORD, "cifar-100 file")?;
    bytes
        .chunks_exact(CIFAR100_RECORD)
        .map(|rec| {
            let (coarse, fine) = (rec[0] as usize, rec[1] as usize);
            if coarse >= 20 || fine >= 100 {
                return Err(Error::Format(format!("cifar-100 labels ({coarse}, {fine}) out of range")));
            }
            Ok(LabeledImage { pixels: pixels_from_bytes(&rec[2..]), fine_label: fine, coarse_label: Some(coarse) })
        })
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Accepts either the extracted archive directory or its parent.
fn resolve(dir: &Path, inner: &str, probe: &str) -> PathBuf {
    if dir.join(probe).exists() {
        dir.to_path_buf()
    } else {
        dir.join(inner)
    }
}

/// Class names from a label file; the file may list fewer classes than the official archive.
fn names(
    dir: &Path,
    file: &str,
    default_count: usize,
    images: &[LabeledImage],
    label: impl Fn(&LabeledImage) -> usize,
) -> Vec<String> {
    let listed: Vec<String> = fs::read_to_string(dir.join(file))
        .map(|s| s.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    let needed = images.iter().map(|im| label(im) + 1).max().unwrap_or(0);
    if !listed.is_empty() && listed.len() >= needed {
        listed
    } else {
        (0..default_count.max(needed)).map(|i| format!("class_{i}")).collect()
    }
}

/// Reads the five training batches and the test batch.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<CifarSplits> {
    let dir = resolve(path.as_ref(), "cifar-10-batches-bin", CIFAR10_TEST_FILE);
    let mut train = Vec::new();
    for f in CIFAR10_TRAIN_FILES {
        train.extend(parse_cifar10(&read(&dir.join(f))?)?);
    }
    let test = parse_cifar10(&read(&dir.join(CIFAR10_TEST_FILE))?)?;
    let class_names = names(&dir, "batches.meta.txt", 10, &train, |im| im.fine_label);
    let train = DatasetSplit::new(train, class_names.clone());
    let test = DatasetSplit::with_stats(test, class_names, train.stats.clone());
    Ok(CifarSplits { train, test, coarse_names: Vec::new() })
}

pub fn load_cifar100(path: impl AsRef<Path>) -> Result<CifarSplits> {
    let dir = resolve(path.as_ref(), "cifar-100-binary", CIFAR100_TEST_FILE);
    let train = parse_cifar100(&read(&dir.join(CIFAR100_TRAIN_FILE))?)?;
    let test = parse_cifar100(&read(&dir.join(CIFAR100_TEST_FILE))?)?;
    let class_names = names(&dir, "fine_label_names.txt", 100, &train, |im| im.fine_label);
    let coarse_names = names(&dir, "coarse_label_names.txt", 20, &train, |im| im.coarse_label.unwrap_or(0));
    let train = DatasetSplit::new(train, class_names.clone());
    let test = DatasetSplit::with_stats(test, class_names, train.stats.clone());
    Ok(CifarSplits { train, test, coarse_names })
}

/// Serializes images back into CIFAR-10 records (pixels rounded to bytes).
pub fn encode_cifar10(images: &[LabeledImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * CIFAR10_RECORD);
    for im in images {
        out.push(im.fine_label as u8);
        out.extend(im.pixels.data().iter().map(|&v| to_byte(v)));
    }
    out
}

pub fn encode_cifar100(images: &[LabeledImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * CIFAR100_RECORD);
    for im in images {
        out.push(im.coarse_label.unwrap_or(0) as u8);
        out.push(im.fine_label as u8);
        out.extend(im.pixels.data().iter().map(|&v| to_byte(v)));
    }
    out
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
