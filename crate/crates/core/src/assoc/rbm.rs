use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Bernoulli–Bernoulli restricted Boltzmann machine with `W: [V, H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rbm<T> {
    pub w: Tensor<T>,
    /// Visible bias.
    pub a: Tensor<T>,
    /// Hidden bias.
    pub b: Tensor<T>,
}

/// Which half of the visible layer is held fixed during interplay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClampSide {
    First,
    Second,
}

impl<T: Scalar> Rbm<T> {
    /// Weights drawn from `N(0, 0.01²)`, zero biases.
    pub fn new(visible: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rbm-init"));
        let normal = Normal::new(0.0, 0.01).expect("valid deviation");
        Self {
            w: Tensor::from_fn(&[visible, hidden], |_| T::lit(normal.sample(&mut rng))),
            a: Tensor::zeros(&[visible]),
            b: Tensor::zeros(&[hidden]),
        }
    }

    pub fn from_parts(w: Tensor<T>, a: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        if w.rank() != 2 || a.shape() != [w.dim(0)] || b.shape() != [w.dim(1)] {
            return Err(shape_err!("rbm W {:?}, a {:?}, b {:?}", w.shape(), a.shape(), b.shape()));
        }
        Ok(Self { w, a, b })
    }

    pub fn visible(&self) -> usize {
        self.w.dim(0)
    }

    pub fn hidden(&self) -> usize {
        self.w.dim(1)
    }

    fn check_visible(&self, v: &Tensor<T>) -> Result<()> {
        if v.rank() != 2 || v.dim(1) != self.visible() {
            return Err(shape_err!("rbm expects [N, {}] visible states, got {:?}", self.visible(), v.shape()));
        }
        Ok(())
    }

    /// `σ(v·W + b)`, shape `[N, H]`.
    pub fn hidden_probs(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_visible(v)?;
        let (n, vis, hid) = (v.dim(0), self.visible(), self.hidden());
        let mut h = Tensor::zeros(&[n, hid]);
        for i in 0..n {
            h.row_mut(i).copy_from_slice(self.b.data());
        }
        gemm_nn(n, vis, hid, v.data(), self.w.data(), h.data_mut(), true);
        Ok(h.map(sigmoid))
    }

    /// `σ(h·Wᵀ + a)`, shape `[N, V]`.
    pub fn visible_probs(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        if h.rank() != 2 || h.dim(1) != self.hidden() {
            return Err(shape_err!("rbm expects [N, {}] hidden states, got {:?}", self.hidden(), h.shape()));
        }
        let (n, vis, hid) = (h.dim(0), self.visible(), self.hidden());
        let mut v = Tensor::zeros(&[n, vis]);
        for i in 0..n {
            v.row_mut(i).copy_from_slice(self.a.data());
        }
        gemm_nt(n, hid, vis, h.data(), self.w.data(), v.data_mut(), true);
        Ok(v.map(sigmoid))
    }

    /// `E(v, h) = −vᵀW h − aᵀv − bᵀh`.
    pub fn energy(&self, v: &[T], h: &[T]) -> Result<T> {
        if v.len() != self.visible() || h.len() != self.hidden() {
            return Err(shape_err!("energy of ({}, {}) on a {}×{} rbm", v.len(), h.len(), self.visible(), self.hidden()));
        }
        let hid = self.hidden();
        let mut e = T::zero();
        for (i, &vi) in v.iter().enumerate() {
            let row = &self.w.data()[i * hid..(i + 1) * hid];
            e -= vi * row.iter().zip(h).map(|(&w, &hj)| w * hj).sum::<T>();
        }
        e -= v.iter().zip(self.a.data()).map(|(&x, &y)| x * y).sum::<T>();
        e -= h.iter().zip(self.b.data()).map(|(&x, &y)| x * y).sum::<T>();
        Ok(e)
    }

    /// Deterministic mean-field reconstruction `σ(σ(vW + b)Wᵀ + a)`.
    pub fn reconstruct(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        self.visible_probs(&self.hidden_probs(v)?)
    }

    /// Mean squared difference between `v` and its mean-field reconstruction.
    pub fn reconstruction_error(&self, v: &Tensor<T>) -> Result<f64> {
        let r = self.reconstruct(v)?;
        let se: f64 = r.data().iter().zip(v.data()).map(|(&x, &y)| (x - y).to_f64_lossy().powi(2)).sum();
        Ok(se / v.len() as f64)
    }

    /// One contrastive-divergence step on `batch`; returns the reconstruction error of `v₁`.
    ///
    /// `h₀ = σ(v₀W + b)`, `h̃₀ ~ Bernoulli(h₀)`, `v₁ = σ(h̃₀Wᵀ + a)`, `h₁ = σ(v₁W + b)`;
    /// `ΔW = lr·(v₀ᵀh₀ − v₁ᵀh₁)/N` and likewise for the biases.
    pub fn cd1_update<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, lr: T, rng: &mut R) -> Result<f64> {
        let h0 = self.hidden_probs(batch)?;
        let mut h_sample = h0.clone();
        for p in h_sample.data_mut() {
            *p = if T::lit(rng.random::<f64>()) < *p { T::one() } else { T::zero() };
        }
        let v1 = self.visible_probs(&h_sample)?;
        let h1 = self.hidden_probs(&v1)?;
        let (n, vis, hid) = (batch.dim(0), self.visible(), self.hidden());
        let scale = lr / T::from_usize_lossy(n);

        let mut pos = vec![T::zero(); vis * hid];
        gemm_tn(vis, n, hid, batch.data(), h0.data(), &mut pos, false);
        let mut neg = vec![T::zero(); vis * hid];
        gemm_tn(vis, n, hid, v1.data(), h1.data(), &mut neg, false);
        for ((w, &p), &q) in self.w.data_mut().iter_mut().zip(&pos).zip(&neg) {
            *w += scale * (p - q);
        }
        for i in 0..n {
            for (a, (&x0, &x1)) in self.a.data_mut().iter_mut().zip(batch.row(i).iter().zip(v1.row(i))) {
                *a += scale * (x0 - x1);
            }
            for (b, (&p0, &p1)) in self.b.data_mut().iter_mut().zip(h0.row(i).iter().zip(h1.row(i))) {
                *b += scale * (p0 - p1);
            }
        }
        let se: f64 = v1.data().iter().zip(batch.data()).map(|(&x, &y)| (x - y).to_f64_lossy().powi(2)).sum();
        Ok(se / batch.len() as f64)
    }

    /// Clamped mean-field iteration on rows of `[clamped ‖ free]` (or `[free ‖ clamped]`).
    ///
    /// Each step computes `h = σ(vW + b)` and `σ(hWᵀ + a)`, copies the free half from
    /// the latter and resets the clamped half. Returns the free half after `steps` steps.
    pub fn clamped_interplay(
        &self,
        clamped: &Tensor<T>,
        free_init: &Tensor<T>,
        side: ClampSide,
        steps: usize,
    ) -> Result<Tensor<T>> {
        let half = self.visible() / 2;
        if !self.visible().is_multiple_of(2)
            || clamped.rank() != 2
            || clamped.shape() != free_init.shape()
            || clamped.dim(1) != half
        {
            return Err(shape_err!(
                "interplay halves {:?} and {:?} on a {}-unit visible layer",
                clamped.shape(),
                free_init.shape(),
                self.visible()
            ));
        }
        if steps == 0 {
            return Ok(free_init.clone());
        }
        let n = clamped.dim(0);
        let (c_off, f_off) = match side {
            ClampSide::First => (0, half),
            ClampSide::Second => (half, 0),
        };
        let mut v = Tensor::zeros(&[n, 2 * half]);
        for i in 0..n {
            v.row_mut(i)[c_off..c_off + half].copy_from_slice(clamped.row(i));
            v.row_mut(i)[f_off..f_off + half].copy_from_slice(free_init.row(i));
        }
        let mask: Vec<bool> = (0..2 * half).map(|j| (c_off..c_off + half).contains(&j)).collect();
        let v = self.iterate_clamped(&v, &mask, steps)?;
        let data = (0..n).flat_map(|i| v.row(i)[f_off..f_off + half].to_vec()).collect();
        Tensor::new(&[n, half], data)
    }

    /// Mean-field iteration of full visible states where units with `clamp[j]` stay fixed.
    pub fn iterate_clamped(&self, v: &Tensor<T>, clamp: &[bool], steps: usize) -> Result<Tensor<T>> {
        self.check_visible(v)?;
        if clamp.len() != self.visible() {
            return Err(shape_err!("clamp mask of {} for {} visible units", clamp.len(), self.visible()));
        }
        let mut v = v.clone();
        for _ in 0..steps {
            let next = self.reconstruct(&v)?;
            for (i, (x, &y)) in v.data_mut().iter_mut().zip(next.data()).enumerate() {
                if !clamp[i % clamp.len()] {
                    *x = y;
                }
            }
        }
        Ok(v)
    }
}

/// Epoch count, step schedule and batch size for RBM training.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub cd_steps: usize,
}

impl Default for RbmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 0.1,
            lr_decay_epochs: vec![500, 1000],
            lr_decay_factor: 0.1,
            batch_size: 64,
            seed: 0,
            cd_steps: 1,
        }
    }
}

impl RbmTrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid!("rbm epochs and batch_size must be positive"));
        }
        if self.cd_steps != 1 {
            return Err(invalid!("only CD-1 is implemented, got cd_steps = {}", self.cd_steps));
        }
        if self.lr_decay_epochs.iter().any(|&d| d >= self.epochs) {
            return Err(invalid!("rbm decay epochs {:?} must precede epoch {}", self.lr_decay_epochs, self.epochs));
        }
        Ok(())
    }
}

/// CD-1 over seeded mini-batches of `pairs`; returns the mean reconstruction error per epoch.
pub fn train_rbm<T: Scalar>(
    rbm: &mut Rbm<T>,
    pairs: &Tensor<T>,
    cfg: &RbmTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if pairs.rank() != 2 || pairs.dim(1) != rbm.visible() {
        return Err(shape_err!("rbm with {} visible units given pairs {:?}", rbm.visible(), pairs.shape()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "rbm-cd"));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = T::lit(cfg.lr_at(epoch));
        let mut total = 0.0;
        for idx in crate::data::batches(pairs.dim(0), cfg.batch_size, cfg.seed, epoch) {
            let mut data = Vec::with_capacity(idx.len() * pairs.row_len());
            for &i in &idx {
                data.extend_from_slice(pairs.row(i));
            }
            let batch = Tensor::new(&[idx.len(), pairs.row_len()], data)?;
            total += rbm.cd1_update(&batch, lr, &mut rng)? * idx.len() as f64;
        }
        let err = total / pairs.dim(0) as f64;
        on_epoch(epoch, err);
        curve.push(err);
    }
    Ok(curve)
}

/// Cosine similarity; zero vectors compare as 0.
pub fn cosine<T: Scalar>(x: &[T], y: &[T]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(&a, &b)| (a * b).to_f64_lossy()).sum();
    let nx: f64 = x.iter().map(|&a| a.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|&a| a.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    }
}
