//! Finite-difference audit of every analytic gradient the networks rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::Stage;
use crate::noise::input_gradient;
use crate::ops::gradcheck::{central_difference_error, finite_difference_check, random_tensor};
use crate::ops::{one_hot, softmax_cross_entropy, BatchNorm2d, Conv2d, Dense, Flatten, Layer, MaxPool2x2, Mode, Relu};
use crate::pathways::{imitation_loss, Network, NetworkSpec, PathwayKind};
use crate::rng::derive_seed;
use crate::tensor::{Param, Tensor};

/// Largest tolerated relative error.
pub const TOLERANCE: f64 = 1e-4;

const EPS: f64 = 1e-5;

/// Every check run by [`gradient_checks`], in report order.
pub const CHECKS: [&str; 11] = [
    "conv2d",
    "batchnorm-train",
    "batchnorm-eval",
    "relu",
    "maxpool",
    "flatten",
    "dense",
    "stage",
    "cross-entropy",
    "imitation-loss",
    "input-gradient",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Negates the input gradient of the wrapped layer.
struct SignFlipped<'a>(&'a mut dyn Layer<f64>);

impl Layer<f64> for SignFlipped<'_> {
    fn forward(&mut self, input: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        self.0.forward(input, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.0.backward(grad_out)?.map(|g| -g))
    }

    fn params(&self) -> Vec<&Param<f64>> {
        self.0.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.0.params_mut()
    }

    fn name(&self) -> String {
        self.0.name()
    }

    fn is_smooth_at(&self, input: &Tensor<f64>, index: usize, eps: f64) -> bool {
        self.0.is_smooth_at(input, index, eps)
    }
}

fn layer_error(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64, fault: bool) -> Result<f64> {
    if fault {
        finite_difference_check(&mut SignFlipped(layer), x, EPS, mode, seed)
    } else {
        finite_difference_check(layer, x, EPS, mode, seed)
    }
}

fn flip(grad: Tensor<f64>, fault: bool) -> Tensor<f64> {
    if fault {
        grad.map(|g| -g)
    } else {
        grad
    }
}

fn one_instance(name: &str, rng: &mut ChaCha8Rng, trial: u64, fault: bool) -> Result<f64> {
    match name {
        "conv2d" => {
            let k = [1, 3, 5][trial as usize % 3];
            let mut conv = Conv2d::<f64>::new(2, 3, k, rng)?;
            let x = random_tensor(&[2, 2, 5, 5], rng);
            layer_error(&mut conv, &x, Mode::Train, trial, fault)
        }
        "batchnorm-train" | "batchnorm-eval" => {
            let mut bn = BatchNorm2d::<f64>::new(2);
            bn.gamma.value = random_tensor(&[2], rng);
            bn.beta.value = random_tensor(&[2], rng);
            bn.running_mean = random_tensor(&[2], rng);
            bn.running_var = random_tensor(&[2], rng).map(|v| 1.0 + v.abs());
            let x = random_tensor(&[4, 2, 3, 3], rng);
            let mode = if name == "batchnorm-train" { Mode::Train } else { Mode::Eval };
            layer_error(&mut bn, &x, mode, trial, fault)
        }
        "relu" => layer_error(&mut Relu::new(), &random_tensor(&[2, 3, 4], rng), Mode::Train, trial, fault),
        "maxpool" => layer_error(&mut MaxPool2x2::new(), &random_tensor(&[2, 2, 4, 6], rng), Mode::Train, trial, fault),
        "flatten" => layer_error(&mut Flatten::new(), &random_tensor(&[2, 2, 3, 3], rng), Mode::Train, trial, fault),
        "dense" => {
            let mut dense = Dense::<f64>::new(6, 4, rng);
            dense.bias.value = random_tensor(&[4], rng);
            layer_error(&mut dense, &random_tensor(&[3, 6], rng), Mode::Train, trial, fault)
        }
        "stage" => {
            let mut stage = Stage::<f64>::new(2, 3, 3, rng)?;
            let x = random_tensor(&[3, 2, 4, 4], rng);
            layer_error(&mut stage, &x, Mode::Train, trial, fault)
        }
        "cross-entropy" => {
            let logits = random_tensor(&[3, 5], rng).map(|v| 3.0 * v);
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            let y = one_hot(&labels, 5)?;
            let (_, grad) = softmax_cross_entropy(&logits, &y)?;
            Ok(central_difference_error(
                |v| softmax_cross_entropy(&Tensor::new(&[3, 5], v.to_vec()).unwrap(), &y).unwrap().0,
                logits.data(),
                flip(grad, fault).data(),
                EPS,
            ))
        }
        "imitation-loss" => {
            let logits = random_tensor(&[3, 4], rng).map(|v| 2.0 * v);
            let gc = random_tensor(&[3, 6], rng);
            let gf = random_tensor(&[3, 6], rng);
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            let y = one_hot(&labels, 4)?;
            let alpha = rng.random_range(0.0..1.0);
            let l = imitation_loss(&logits, &gc, &gf, &y, alpha)?;
            let e_logits = central_difference_error(
                |v| imitation_loss(&Tensor::new(&[3, 4], v.to_vec()).unwrap(), &gc, &gf, &y, alpha).unwrap().loss,
                logits.data(),
                flip(l.d_logits, fault).data(),
                EPS,
            );
            let e_features = central_difference_error(
                |v| imitation_loss(&logits, &Tensor::new(&[3, 6], v.to_vec()).unwrap(), &gf, &y, alpha).unwrap().loss,
                gc.data(),
                flip(l.d_features, fault).data(),
                EPS,
            );
            Ok(e_logits.max(e_features))
        }
        "input-gradient" => {
            let spec = NetworkSpec {
                kind: PathwayKind::Fine,
                stages: vec![(3, 3), (4, 3)],
                fc_width: 6,
                num_classes: 3,
                input_channels: 3,
                input_size: 8,
            };
            let mut net = Network::<f64>::build(&spec, trial)?;
            let x = random_tensor(&[2, 3, 8, 8], rng);
            let labels = vec![rng.random_range(0..3), rng.random_range(0..3)];
            let y = one_hot::<f64>(&labels, 3)?;
            let (_, grad) = input_gradient(&mut net, &x, &labels)?;
            Ok(central_difference_error(
                |v| {
                    let xt = Tensor::new(x.shape(), v.to_vec()).unwrap();
                    let (_, logits) = net.forward(&xt, Mode::Eval).unwrap();
                    softmax_cross_entropy(&logits, &y).unwrap().0
                },
                x.data(),
                flip(grad, fault).data(),
                EPS,
            ))
        }
        other => Err(Error::Config(format!("unknown gradient check {other:?}"))),
    }
}

/// Runs every check over `instances` random 64-bit instances.
///
/// `fault` names one check whose analytic gradient is sign-flipped, so the
/// report itself can be shown to catch a broken backward pass.
pub fn gradient_checks(instances: usize, seed: u64, fault: Option<&str>) -> Result<Vec<CheckOutcome>> {
    if let Some(f) = fault {
        if !CHECKS.contains(&f) {
            return Err(Error::Config(format!("unknown gradient check {f:?}; expected one of {}", CHECKS.join(", "))));
        }
    }
    CHECKS
        .iter()
        .map(|&name| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name));
            let mut worst = 0.0f64;
            for trial in 0..instances {
                worst = worst.max(one_instance(name, &mut rng, trial as u64, fault == Some(name))?);
            }
            Ok(CheckOutcome { name, instances, max_rel_error: worst })
        })
        .collect()
}
