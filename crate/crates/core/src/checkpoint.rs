//! Binary tensor checkpoints.
//!
//! Layout (little-endian): `b"TPCK"`, version `u16`, tensor count `u32`, then per
//! tensor a `u16` name length, the UTF-8 name, rank `u8`, each dim as `u32`, and the
//! values as row-major `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TPCK";
pub const VERSION: u16 = 1;

/// Ordered collection of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.entries.push((name.into(), tensor.cast()));
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// Loads `name` into `dst`, insisting on an identical shape.
    pub fn load_into<T: Scalar>(&self, name: &str, dst: &mut Tensor<T>) -> Result<()> {
        let src = self.require(name)?;
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!("tensor {name:?} has shape {:?}, expected {:?}", src.shape(), dst.shape())));
        }
        *dst = src.cast();
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank too large: {name}")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim too large: {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name =
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.push("w", &Tensor::<f32>::from_f64(&[2], &[1.0, -2.0]).unwrap());
        let b = ck.to_bytes().unwrap();
        assert_eq!(&b[..4], b"TPCK");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u32::from_le_bytes([b[6], b[7], b[8], b[9]]), 1);
        assert_eq!(u16::from_le_bytes([b[10], b[11]]), 1);
        assert_eq!(b[12], b'w');
        assert_eq!(b[13], 1);
        assert_eq!(u32::from_le_bytes([b[14], b[15], b[16], b[17]]), 2);
        assert_eq!(&b[18..22], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 26);
    }

    #[test]
    fn rejects_corruption() {
        let mut ck = Checkpoint::new();
        ck.push("a", &Tensor::<f32>::zeros(&[3]));
        let b = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            names in proptest::collection::vec("[a-z.]{1,12}", 1..4),
            bits in proptest::collection::vec(any::<u32>(), 1..40),
        ) {
            let mut ck = Checkpoint::new();
            for (i, name) in names.iter().enumerate() {
                let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b.rotate_left(i as u32))).collect();
                let t = Tensor::new(&[1, data.len()], data).unwrap();
                ck.entries.push((name.clone(), t));
            }
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
