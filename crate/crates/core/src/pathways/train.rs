use super::loss::imitation_loss;
use super::network::Network;
use crate::data::{batches, Encoded};
use crate::error::{invalid, Error, Result};
use crate::ops::{one_hot, sgd_momentum_step, softmax, softmax_cross_entropy, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SGD-with-momentum schedule and the imitation mixing weight.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    /// Cross-entropy weight in the imitation loss; unused for plain cross-entropy training.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            lr_decay_epochs: vec![100, 125],
            lr_decay_factor: 0.1,
            seed: 0,
            alpha: 0.4,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect during (0-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&d| epoch >= d).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid!("epochs and batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("lr must be non-negative and momentum in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `NaN` when no test split was supplied.
    pub test_accuracy: f64,
}

/// A frozen teacher and the inputs it sees for each training image (same order as the student's).
pub struct Teacher<'a, T> {
    pub net: &'a mut Network<T>,
    pub inputs: &'a Encoded,
}

/// Trains with cross-entropy on `train`.
pub fn train_fine<T: Scalar>(
    net: &mut Network<T>,
    train: &Encoded,
    test: Option<&Encoded>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    run(net, train, test, cfg, None, on_epoch)
}

/// Trains CoarseNet; with a teacher the imitation loss replaces plain cross-entropy.
pub fn train_coarse<T: Scalar>(
    net: &mut Network<T>,
    train: &Encoded,
    test: Option<&Encoded>,
    cfg: &TrainConfig,
    teacher: Option<Teacher<'_, T>>,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let targets = match teacher {
        Some(t) => {
            net.check_pairable(t.net)?;
            if t.inputs.len() != train.len() {
                return Err(invalid!("teacher sees {} images, student {}", t.inputs.len(), train.len()));
            }
            Some(forward_features(t.net, t.inputs, cfg.batch_size.max(1))?.0)
        }
        None => None,
    };
    run(net, train, test, cfg, targets.as_ref(), on_epoch)
}

fn gather_rows<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(idx.len() * t.row_len());
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(&[idx.len(), t.row_len()], data).expect("row gather")
}

fn run<T: Scalar>(
    net: &mut Network<T>,
    train: &Encoded,
    test: Option<&Encoded>,
    cfg: &TrainConfig,
    targets: Option<&Tensor<T>>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let k = net.spec().num_classes;
    let (momentum, alpha) = (T::lit(cfg.momentum), T::lit(cfg.alpha));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut total, mut seen) = (0.0, 0usize);
        // batch norm needs two samples, so a trailing singleton batch is skipped
        for idx in batches(train.len(), cfg.batch_size, cfg.seed, epoch).into_iter().filter(|b| b.len() >= 2) {
            let x = train.gather::<T>(&idx);
            let y = one_hot::<T>(&train.labels_at(&idx), k)?;
            let (g, logits) = net.forward(&x, Mode::Train)?;
            let (loss, d_logits, d_features) = match targets {
                Some(gf) => {
                    let l = imitation_loss(&logits, &g, &gather_rows(gf, &idx), &y, alpha)?;
                    (l.loss, l.d_logits, Some(l.d_features))
                }
                None => {
                    let (l, d) = softmax_cross_entropy(&logits, &y)?;
                    (l, d, None)
                }
            };
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * idx.len() as f64;
            seen += idx.len();
            net.backward(&d_logits, d_features.as_ref(), false)?;
            sgd_momentum_step(&mut net.params_mut(), T::lit(lr), momentum);
        }
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: total / seen.max(1) as f64,
            test_accuracy: match test {
                Some(t) => evaluate_accuracy(net, t, cfg.batch_size)?,
                None => f64::NAN,
            },
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}

/// Eval-mode features `g` and class probabilities `p` for every input, in order.
pub fn forward_features<T: Scalar>(net: &mut Network<T>, data: &Encoded, batch_size: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (mut g_all, mut p_all) = (Vec::new(), Vec::new());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (g, logits) = net.forward(&data.gather::<T>(chunk), Mode::Eval)?;
        g_all.extend_from_slice(g.data());
        p_all.extend_from_slice(softmax(&logits)?.data());
    }
    let s = net.spec();
    Ok((
        Tensor::new(&[data.len(), s.fc_width], g_all)?.ensure_finite("forward_features")?,
        Tensor::new(&[data.len(), s.num_classes], p_all)?,
    ))
}

/// Top-1 accuracy; ties go to the lowest class index.
pub fn evaluate_accuracy<T: Scalar>(net: &mut Network<T>, data: &Encoded, batch_size: usize) -> Result<f64> {
    let (_, p) = forward_features(net, data, batch_size)?;
    Ok(accuracy(&p.argmax_rows(), &data.labels))
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathways::{NetworkSpec, PathwayKind};

    fn spec(channels: usize) -> NetworkSpec {
        NetworkSpec {
            kind: PathwayKind::Fine,
            stages: vec![(4, 3), (4, 3)],
            fc_width: 8,
            num_classes: 2,
            input_channels: channels,
            input_size: 8,
        }
    }

    /// Class 0 bright on the left half, class 1 on the right half.
    fn halves(n: usize, channels: usize) -> Encoded {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            for _ in 0..channels {
                for _ in 0..8 {
                    for x in 0..8 {
                        let lit = (x < 4) == (label == 0);
                        data.push(if lit { 1.0 } else { -1.0 } + ((i * 7 + x) % 5) as f32 * 0.05);
                    }
                }
            }
            labels.push(label);
        }
        Encoded::from_parts(Tensor::new(&[n, channels, 8, 8], data).unwrap(), labels).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 8, lr: 0.05, lr_decay_epochs: vec![], ..TrainConfig::default() }
    }

    #[test]
    fn schedule_steps_at_decay_epochs() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.1);
        assert_eq!(c.lr_at(99), 0.1);
        assert!((c.lr_at(100) - 0.01).abs() < 1e-15);
        assert!((c.lr_at(125) - 0.001).abs() < 1e-15);
        assert_eq!((c.epochs, c.batch_size, c.momentum, c.alpha), (150, 64, 0.9, 0.4));
    }

    #[test]
    fn learns_a_separable_task() {
        let data = halves(32, 1);
        let mut net = Network::<f32>::build(&spec(1), 0).unwrap();
        let hist = train_fine(&mut net, &data, Some(&data), &cfg(8), |_| {}).unwrap();
        assert!(hist.last().unwrap().train_loss < hist[0].train_loss);
        assert_eq!(hist.last().unwrap().test_accuracy, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = halves(20, 1);
        let run = || {
            let mut net = Network::<f32>::build(&spec(1), 4).unwrap();
            let h = train_fine(&mut net, &data, None, &cfg(2), |_| {}).unwrap();
            (net.to_checkpoint(), h[1].train_loss)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn teacher_is_left_untouched_and_alpha_one_matches_plain_training() {
        let fine_data = halves(16, 2);
        let coarse_data = halves(16, 1);
        let mut teacher = Network::<f32>::build(&spec(2), 1).unwrap();
        train_fine(&mut teacher, &fine_data, None, &cfg(2), |_| {}).unwrap();
        let before = teacher.to_checkpoint().to_bytes().unwrap();

        let mut c = cfg(2);
        c.alpha = 1.0;
        let mut imitating = Network::<f32>::build(&spec(1), 2).unwrap();
        let teach = Teacher { net: &mut teacher, inputs: &fine_data };
        train_coarse(&mut imitating, &coarse_data, None, &c, Some(teach), |_| {}).unwrap();
        assert_eq!(teacher.to_checkpoint().to_bytes().unwrap(), before);

        let mut plain = Network::<f32>::build(&spec(1), 2).unwrap();
        train_coarse(&mut plain, &coarse_data, None, &c, None, |_| {}).unwrap();
        assert_eq!(plain.to_checkpoint(), imitating.to_checkpoint());
    }

    #[test]
    fn divergence_is_reported() {
        let data = halves(16, 1);
        let mut net = Network::<f32>::build(&spec(1), 0).unwrap();
        let c = TrainConfig { lr: 1e30, ..cfg(3) };
        assert!(matches!(train_fine(&mut net, &data, None, &c, |_| {}), Err(Error::Diverged { .. })));
    }

    #[test]
    fn features_are_nonnegative_and_probabilities_sum_to_one() {
        let data = halves(6, 1);
        let mut net = Network::<f32>::build(&spec(1), 0).unwrap();
        let (g, p) = forward_features(&mut net, &data, 4).unwrap();
        assert!(g.data().iter().all(|&v| v >= 0.0));
        for i in 0..6 {
            assert!((p.row(i).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(forward_features(&mut net, &data, 4).unwrap().0, g);
    }
}
