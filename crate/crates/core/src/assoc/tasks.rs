use super::memory::{snap_to_codebook, AssociativeMemory};
use crate::checkpoint::Checkpoint;
use crate::data::batches;
use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::{one_hot, sgd_momentum_step, softmax_cross_entropy, Dense, Layer, Mode};
use crate::pathways::{Network, TrainConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise `[a ‖ b]`.
pub fn concat_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0) {
        return Err(shape_err!("cannot concatenate rows of {:?} and {:?}", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..a.dim(0) {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(&[a.dim(0), a.dim(1) + b.dim(1)], data)
}

/// Codebook rows selected by `labels`.
pub fn rows_for<T: Scalar>(codebook: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(labels.len() * codebook.row_len());
    for &l in labels {
        if l >= codebook.dim(0) {
            return Err(invalid!("label {l} has no context vector ({} stored)", codebook.dim(0)));
        }
        data.extend_from_slice(codebook.row(l));
    }
    Tensor::new(&[labels.len(), codebook.row_len()], data)
}

/// FineNet predictions after associating its features with CoarseNet's.
///
/// `g_coarse` and `g_fine` are raw features of the same (possibly corrupted) images.
/// The CoarseNet half is clamped, FineNet's half starts from its own normalized
/// features, and after `steps` mean-field steps the denormalized FineNet half goes
/// through FineNet's readout. With `steps = 0` the features are used unchanged.
pub fn robustness_predict<T: Scalar>(
    fine: &Network<T>,
    memory: &AssociativeMemory<T>,
    g_coarse: &Tensor<T>,
    g_fine: &Tensor<T>,
    steps: usize,
) -> Result<Vec<usize>> {
    if memory.half() != fine.spec().fc_width {
        return Err(Error::Config(format!(
            "memory pairs {}-wide features, FineNet produces {}",
            memory.half(),
            fine.spec().fc_width
        )));
    }
    let features =
        if steps == 0 { g_fine.clone() } else { memory.complete(g_coarse, &memory.normalize_second(g_fine)?, steps)? };
    Ok(fine.logits_from_features(&features)?.argmax_rows())
}

/// Super-class ids retrieved from CoarseNet features: clamp, start the context half at 0,
/// iterate, then snap to the nearest stored context vector.
pub fn retrieve_context<T: Scalar>(memory: &AssociativeMemory<T>, g_coarse: &Tensor<T>, steps: usize) -> Result<Vec<usize>> {
    let codebook = memory.codebook.as_ref().ok_or_else(|| Error::Config("no context vectors loaded".into()))?;
    let zeros = Tensor::zeros(&[g_coarse.dim(0), memory.half()]);
    let retrieved = memory.complete(g_coarse, &zeros, steps)?;
    Ok((0..retrieved.dim(0)).map(|i| snap_to_codebook(retrieved.row(i), codebook)).collect())
}

/// Readout over `[g_F ‖ c]`, trained with FineNet frozen.
#[derive(Clone, Debug)]
pub struct BiasedReadout<T> {
    pub dense: Dense<T>,
}

impl<T: Scalar> BiasedReadout<T> {
    /// Starts from FineNet's own readout, with zero weights on the context inputs.
    pub fn from_fine(fine: &Network<T>, context_dim: usize) -> Result<Self> {
        let (fc, k) = (fine.readout.inputs(), fine.readout.outputs());
        let mut w = Tensor::zeros(&[fc + context_dim, k]);
        w.data_mut()[..fc * k].copy_from_slice(fine.readout.weight.value.data());
        Ok(Self { dense: Dense::from_params(w, fine.readout.bias.value.clone())? })
    }

    pub fn logits(&self, g_fine: &Tensor<T>, context: &Tensor<T>) -> Result<Tensor<T>> {
        self.dense.clone().forward(&concat_rows(g_fine, context)?, Mode::Eval)
    }

    pub fn predict(&self, g_fine: &Tensor<T>, context: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.logits(g_fine, context)?.argmax_rows())
    }

    /// Cross-entropy SGD on fixed features; returns the mean loss per epoch.
    pub fn train(&mut self, g_fine: &Tensor<T>, context: &Tensor<T>, labels: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        let x_all = concat_rows(g_fine, context)?;
        let k = self.dense.outputs();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let lr = T::lit(cfg.lr_at(epoch));
            let mut total = 0.0;
            for idx in batches(labels.len(), cfg.batch_size, cfg.seed, epoch) {
                let mut data = Vec::with_capacity(idx.len() * x_all.row_len());
                for &i in &idx {
                    data.extend_from_slice(x_all.row(i));
                }
                let x = Tensor::new(&[idx.len(), x_all.row_len()], data)?;
                let y = one_hot::<T>(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), k)?;
                let logits = self.dense.forward(&x, Mode::Train)?;
                let (loss, d) = softmax_cross_entropy(&logits, &y)?;
                let loss = loss.to_f64_lossy();
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                total += loss * idx.len() as f64;
                self.dense.backward(&d)?;
                sgd_momentum_step(&mut self.dense.params_mut(), lr, T::lit(cfg.momentum));
            }
            curve.push(total / labels.len().max(1) as f64);
        }
        Ok(curve)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("biased.weight", &self.dense.weight.value);
        ck.push("biased.bias", &self.dense.bias.value);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let w = ck.require("biased.weight")?.cast();
        let b = ck.require("biased.bias")?.cast();
        Ok(Self { dense: Dense::from_params(w, b)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::{make_context_vectors, train_rbm, NormStats, Rbm, RbmTrainConfig};
    use crate::pathways::{NetworkSpec, PathwayKind};

    fn fine_net() -> Network<f64> {
        let spec = NetworkSpec {
            kind: PathwayKind::Fine,
            stages: vec![(2, 3)],
            fc_width: 4,
            num_classes: 3,
            input_channels: 1,
            input_size: 4,
        };
        Network::build(&spec, 0).unwrap()
    }

    #[test]
    fn zero_steps_is_plain_readout() {
        let fine = fine_net();
        let g = Tensor::from_fn(&[5, 4], |i| (i % 7) as f64 * 0.3);
        let mem =
            AssociativeMemory::new(Rbm::new(8, 6, 0), NormStats::fit(&concat_rows(&g, &g).unwrap()).unwrap(), None).unwrap();
        let plain = fine.logits_from_features(&g).unwrap().argmax_rows();
        assert_eq!(robustness_predict(&fine, &mem, &g, &g, 0).unwrap(), plain);
    }

    #[test]
    fn warm_started_readout_matches_fine_readout() {
        let fine = fine_net();
        let g = Tensor::from_fn(&[5, 4], |i| (i % 7) as f64 * 0.3);
        let ctx = Tensor::full(&[5, 6], 1.0);
        let biased = BiasedReadout::from_fine(&fine, 6).unwrap();
        assert_eq!(biased.logits(&g, &ctx).unwrap(), fine.logits_from_features(&g).unwrap());
    }

    #[test]
    fn context_retrieval_recovers_stored_codes() {
        // two well-separated feature clusters, each paired with its own context vector
        let codebook = make_context_vectors::<f64>(2, 8, 1).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let g = Tensor::from_fn(&[40, 8], |k| {
            let (i, j) = (k / 8, k % 8);
            if (j < 4) == (labels[i] == 0) {
                1.0
            } else {
                0.0
            }
        });
        let pairs = concat_rows(&g, &rows_for(&codebook, &labels).unwrap()).unwrap();
        let stats = NormStats::fit(&pairs).unwrap();
        let mut rbm = Rbm::new(16, 16, 3);
        let cfg = RbmTrainConfig { epochs: 300, lr: 0.5, lr_decay_epochs: vec![], batch_size: 8, ..Default::default() };
        train_rbm(&mut rbm, &stats.normalize(&pairs).unwrap(), &cfg, |_, _| {}).unwrap();
        let mem = AssociativeMemory::new(rbm, stats, Some(codebook)).unwrap();
        assert_eq!(retrieve_context(&mem, &g, 10).unwrap(), labels);
    }
}
