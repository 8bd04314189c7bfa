use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rbm::{cosine, ClampSide, Rbm};
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const RANGE_GUARD: f64 = 1e-8;

/// Per-dimension minimum and maximum of training features.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub min: Tensor<T>,
    pub max: Tensor<T>,
}

impl<T: Scalar> NormStats<T> {
    pub fn fit(features: &Tensor<T>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(shape_err!("feature statistics need [N, D], got {:?}", features.shape()));
        }
        let d = features.dim(1);
        let mut min = Tensor::full(&[d], T::infinity());
        let mut max = Tensor::full(&[d], T::neg_infinity());
        for i in 0..features.dim(0) {
            for (j, &v) in features.row(i).iter().enumerate() {
                min.data_mut()[j] = min.data()[j].min(v);
                max.data_mut()[j] = max.data()[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Side-by-side concatenation of two statistics (for `[first ‖ second]` pairs).
    pub fn concat(first: &Self, second: &Self) -> Self {
        let join = |a: &Tensor<T>, b: &Tensor<T>| {
            let mut v = a.data().to_vec();
            v.extend_from_slice(b.data());
            Tensor::new(&[v.len()], v).expect("non-empty")
        };
        Self { min: join(&first.min, &second.min), max: join(&first.max, &second.max) }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Slice `[start, start + len)` of the statistics.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let cut = |t: &Tensor<T>| Tensor::new(&[len], t.data()[start..start + len].to_vec()).expect("non-empty");
        Self { min: cut(&self.min), max: cut(&self.max) }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 2 || x.dim(1) != self.dim() {
            return Err(shape_err!("statistics of width {} applied to {:?}", self.dim(), x.shape()));
        }
        Ok(())
    }

    /// `(g − min)/(max − min + 1e-8)`, clipped into `[0, 1]`.
    pub fn normalize(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(g)?;
        let d = self.dim();
        let guard = T::lit(RANGE_GUARD);
        let mut out = g.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let (lo, hi) = (self.min.data()[k % d], self.max.data()[k % d]);
            *v = ((*v - lo) / (hi - lo + guard)).max(T::zero()).min(T::one());
        }
        Ok(out)
    }

    pub fn denormalize(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(v)?;
        let d = self.dim();
        let guard = T::lit(RANGE_GUARD);
        let mut out = v.clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            let (lo, hi) = (self.min.data()[k % d], self.max.data()[k % d]);
            *x = *x * (hi - lo + guard) + lo;
        }
        Ok(out)
    }
}

/// Seeded binary codes, one per super-class, pairwise Hamming distance at least `0.4·dim`.
///
/// Attempt `k` draws from seed `seed + k`; fails after 100 attempts.
pub fn make_context_vectors<T: Scalar>(n_super: usize, dim: usize, seed: u64) -> Result<Tensor<T>> {
    if n_super == 0 || dim == 0 {
        return Err(invalid!("need at least one context vector of positive width"));
    }
    let min_distance = (0.4 * dim as f64).ceil() as usize;
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed.wrapping_add(attempt), "context-vectors"));
        let codes: Vec<Vec<bool>> = (0..n_super).map(|_| (0..dim).map(|_| rng.random_bool(0.5)).collect()).collect();
        let separated = (0..n_super)
            .all(|i| (i + 1..n_super).all(|j| codes[i].iter().zip(&codes[j]).filter(|(a, b)| a != b).count() >= min_distance));
        if separated {
            let data = codes.iter().flatten().map(|&b| if b { T::one() } else { T::zero() }).collect();
            return Tensor::new(&[n_super, dim], data);
        }
    }
    Err(invalid!("could not separate {n_super} context vectors of width {dim} in 100 attempts"))
}

/// Index of the codebook row with the highest cosine similarity to `v` (lowest index on ties).
pub fn snap_to_codebook<T: Scalar>(v: &[T], codebook: &Tensor<T>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..codebook.dim(0) {
        let c = cosine(v, codebook.row(k));
        if c > best.1 {
            best = (k, c);
        }
    }
    best.0
}

/// A trained RBM with the feature statistics used to map pairs into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociativeMemory<T> {
    pub rbm: Rbm<T>,
    pub stats: NormStats<T>,
    /// Context vectors `[n_super, dim]` (bias task only).
    pub codebook: Option<Tensor<T>>,
}

impl<T: Scalar> AssociativeMemory<T> {
    pub fn new(rbm: Rbm<T>, stats: NormStats<T>, codebook: Option<Tensor<T>>) -> Result<Self> {
        if stats.dim() != rbm.visible() {
            return Err(shape_err!("statistics of width {} for {} visible units", stats.dim(), rbm.visible()));
        }
        Ok(Self { rbm, stats, codebook })
    }

    pub fn half(&self) -> usize {
        self.rbm.visible() / 2
    }

    /// Clamps the normalized first half, starts the second half at `free_init` (already
    /// normalized), iterates `steps` times and returns the denormalized second half.
    pub fn complete(&self, first: &Tensor<T>, free_init: &Tensor<T>, steps: usize) -> Result<Tensor<T>> {
        let h = self.half();
        let (s1, s2) = (self.stats.slice(0, h), self.stats.slice(h, h));
        let v = self.rbm.clamped_interplay(&s1.normalize(first)?, free_init, ClampSide::First, steps)?;
        s2.denormalize(&v)
    }

    /// Normalizes raw second-half features with the stored statistics.
    pub fn normalize_second(&self, second: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.half();
        self.stats.slice(h, h).normalize(second)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("rbm.w", &self.rbm.w);
        ck.push("rbm.a", &self.rbm.a);
        ck.push("rbm.b", &self.rbm.b);
        ck.push("norm.min", &self.stats.min);
        ck.push("norm.max", &self.stats.max);
        if let Some(c) = &self.codebook {
            ck.push("context.codebook", c);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |name: &str| ck.require(name).map(|t| t.cast::<T>());
        let rbm = Rbm::from_parts(get("rbm.w")?, get("rbm.a")?, get("rbm.b")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let stats = NormStats { min: get("norm.min")?, max: get("norm.max")? };
        Self::new(rbm, stats, ck.get("context.codebook").map(|t| t.cast()))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn endpoints_and_constant_dimensions() {
        let g = Tensor::<f64>::from_f64(&[3, 2], &[1.0, 5.0, 3.0, 5.0, 2.0, 5.0]).unwrap();
        let s = NormStats::fit(&g).unwrap();
        let v = s.normalize(&g).unwrap();
        assert!(v.row(0)[0].abs() < 1e-12);
        assert!((v.row(1)[0] - 1.0).abs() < 1e-7);
        assert!(v.data().iter().skip(1).step_by(2).all(|&x| x == 0.0));
        let out = s.normalize(&Tensor::from_f64(&[1, 2], &[10.0, -3.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn normalize_round_trips(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..50.0, 4), 2..6)) {
            let n = rows.len();
            let g = Tensor::new(&[n, 4], rows.concat()).unwrap();
            let s = NormStats::fit(&g).unwrap();
            let back = s.denormalize(&s.normalize(&g).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&g) < 1e-5);
        }
    }

    #[test]
    fn context_vectors_are_separated_and_seeded() {
        let c = make_context_vectors::<f32>(5, 1000, 3).unwrap();
        assert_eq!(c.shape(), &[5, 1000]);
        assert!(c.data().iter().all(|&v| v == 0.0 || v == 1.0));
        for i in 0..5 {
            for j in i + 1..5 {
                let d = c.row(i).iter().zip(c.row(j)).filter(|(a, b)| a != b).count();
                assert!(d >= 400);
                // Binomial(1000, 1/2): mean 500, sd ≈ 15.8
                assert!((d as f64 - 500.0).abs() < 6.0 * 15.82, "distance {d}");
            }
        }
        assert_eq!(c, make_context_vectors::<f32>(5, 1000, 3).unwrap());
        assert_ne!(c, make_context_vectors::<f32>(5, 1000, 4).unwrap());
        assert!(make_context_vectors::<f32>(40, 4, 0).is_err());
    }

    #[test]
    fn snapping_picks_nearest_code() {
        let book = Tensor::<f64>::from_f64(&[2, 4], &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(snap_to_codebook(&[0.9, 0.7, 0.2, 0.1], &book), 0);
        assert_eq!(snap_to_codebook(&[0.1, 0.3, 0.6, 0.9], &book), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let rbm = Rbm::<f32>::new(6, 4, 2);
        let feats = Tensor::from_fn(&[3, 6], |i| i as f32);
        let mem =
            AssociativeMemory::new(rbm, NormStats::fit(&feats).unwrap(), Some(make_context_vectors(2, 3, 0).unwrap())).unwrap();
        let bytes = mem.to_checkpoint().to_bytes().unwrap();
        let back = AssociativeMemory::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, mem);
    }
}
