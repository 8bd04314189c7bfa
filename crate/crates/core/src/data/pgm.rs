//! Binary PGM (P5) ingestion for mask datasets, plus PGM/PPM dumps for inspection.

use std::fs;
use std::path::Path;

use super::{DatasetSplit, LabeledImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a number in header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header must end with a single whitespace byte"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let n = width * height;
    let pixels = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated pixel data"))?.to_vec();
    Ok(Pgm { width, height, maxval: maxval as u16, pixels })
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Row-stochastic `out × n` matrix averaging `n` source cells into `out` equal bins.
fn area_weights(n: usize, out: usize) -> Vec<f64> {
    let scale = n as f64 / out as f64;
    let mut w = vec![0.0; out * n];
    for o in 0..out {
        let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
        for i in (lo.floor() as usize)..(hi.ceil() as usize).min(n) {
            let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
            if overlap > 0.0 {
                w[o * n + i] = overlap / scale;
            }
        }
    }
    w
}

/// Area-averages a square grayscale image to `size × size`, values scaled to `[0, 1]`.
pub fn resample_area(pgm: &Pgm, size: usize) -> Result<Tensor<f32>> {
    if pgm.width != pgm.height {
        return Err(Error::Format(format!("mask image must be square, got {}x{}", pgm.width, pgm.height)));
    }
    let n = pgm.width;
    let w = area_weights(n, size);
    let src: Vec<f64> = pgm.pixels.iter().map(|&p| f64::from(p) / f64::from(pgm.maxval)).collect();
    // rows first, then columns
    let mut tmp = vec![0.0; size * n];
    for o in 0..size {
        for i in 0..n {
            let wi = w[o * n + i];
            if wi != 0.0 {
                for x in 0..n {
                    tmp[o * n + x] += wi * src[i * n + x];
                }
            }
        }
    }
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        for o in 0..size {
            let mut acc = 0.0;
            for x in 0..n {
                acc += w[o * n + x] * tmp[y * n + x];
            }
            out[y * size + o] = acc.clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(&[1, size, size], out)
}

fn label_from_name(name: &str) -> Result<usize> {
    name.split('_')
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|_| name.contains('_'))
        .ok_or_else(|| Error::Format(format!("mask file {name:?} is not named <classid>_<index>.pgm")))
}

/// Loads every `<classid>_<index>.pgm` in `dir`, sorted by file name.
pub fn load_mask_dataset(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("no .pgm files in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(files.len());
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let label = label_from_name(stem)?;
        let pgm = parse_pgm(&fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let pixels = resample_area(&pgm, IMAGE_SIZE)?;
        images.push(LabeledImage { pixels, fine_label: label, coarse_label: None });
    }
    let classes = images.iter().map(|im| im.fine_label).max().unwrap_or(0) + 1;
    Ok(DatasetSplit::new(images, (0..classes).map(|i| format!("class_{i}")).collect()))
}

/// Writes a `[1, H, W]` tensor as PGM or a `[3, H, W]` tensor as PPM; values clipped to `[0, 1]`.
pub fn write_image(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes = match c {
        1 => encode_pgm(w, h, &image.data().iter().map(|&v| byte(v)).collect::<Vec<_>>()),
        3 => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            let plane = h * w;
            for i in 0..plane {
                for ch in 0..3 {
                    out.push(byte(image.data()[ch * plane + i]));
                }
            }
            out
        }
        _ => return Err(Error::InvalidArgument(format!("cannot write {c}-channel image"))),
    };
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_white_stays_white() {
        let pgm = parse_pgm(&encode_pgm(64, 64, &[255; 64 * 64])).unwrap();
        let t = resample_area(&pgm, 32).unwrap();
        assert_eq!(t.shape(), &[1, 32, 32]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn block_checkerboard_averages_to_half() {
        let px: Vec<u8> = (0..64 * 64)
            .map(|i| {
                let (y, x) = (i / 64, i % 64);
                if (y / 2 + x / 2) % 2 == 0 {
                    255
                } else {
                    0
                }
            })
            .collect();
        // aligned 2x2 blocks land whole in one output cell; compare with direct averaging
        let t = resample_area(&parse_pgm(&encode_pgm(64, 64, &px)).unwrap(), 32).unwrap();
        for oy in 0..32 {
            for ox in 0..32 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += f64::from(px[(2 * oy + dy) * 64 + 2 * ox + dx]) / 255.0;
                    }
                }
                assert!((f64::from(t.data()[oy * 32 + ox]) - s / 4.0).abs() < 1e-6);
            }
        }
        // every 2x2 averaging window of a 1-pixel checkerboard is half white
        let fine: Vec<u8> = (0..64 * 64).map(|i| if (i / 64 + i % 64) % 2 == 0 { 255 } else { 0 }).collect();
        let t = resample_area(&parse_pgm(&encode_pgm(64, 64, &fine)).unwrap(), 32).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn non_integer_ratio_preserves_mean() {
        let px: Vec<u8> = (0..45 * 45).map(|i| (i * 13 % 256) as u8).collect();
        let t = resample_area(&parse_pgm(&encode_pgm(45, 45, &px)).unwrap(), 32).unwrap();
        let src_mean = px.iter().map(|&p| f64::from(p) / 255.0).sum::<f64>() / px.len() as f64;
        let out_mean = t.data().iter().map(|&v| f64::from(v)).sum::<f64>() / 1024.0;
        assert!((src_mean - out_mean).abs() < 1e-5);
    }

    #[test]
    fn header_errors() {
        assert!(parse_pgm(b"P2\n2 2\n255\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00\x00\x00").is_err());
        assert!(parse_pgm(b"P5\n2 2\n65535\n\x00\x00\x00\x00\x00\x00\x00\x00").is_err());
        let ok = parse_pgm(b"P5 # comment\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        assert_eq!(ok.pixels, vec![1, 2, 3, 4]);
        let rect = parse_pgm(&encode_pgm(4, 2, &[0; 8])).unwrap();
        assert!(resample_area(&rect, 32).is_err());
    }

    #[test]
    fn labels_come_from_file_names() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("3_0017.pgm"), encode_pgm(32, 32, &[0; 1024])).unwrap();
        fs::write(dir.path().join("0_0001.pgm"), encode_pgm(64, 64, &[255; 4096])).unwrap();
        let split = load_mask_dataset(dir.path()).unwrap();
        assert_eq!(split.labels(), vec![0, 3]);
        assert_eq!(split.num_classes(), 4);
        assert_eq!(split.channels(), 1);
        fs::write(dir.path().join("bad.pgm"), encode_pgm(2, 2, &[0; 4])).unwrap();
        assert!(load_mask_dataset(dir.path()).is_err());
    }
}
