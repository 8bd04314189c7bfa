use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::NetworkSpec;
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::layers::Stage;
use crate::ops::{Dense, Flatten, Layer, Mode, Relu};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor};

/// Stages, flatten, feature head with ReLU (`g`), and the class readout (`f`).
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    pub stages: Vec<Stage<T>>,
    flatten: Flatten,
    pub head: Dense<T>,
    head_relu: Relu,
    pub readout: Dense<T>,
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "network-init"));
        let mut stages = Vec::with_capacity(spec.stages.len());
        let mut channels = spec.input_channels;
        for &(filters, kernel) in &spec.stages {
            stages.push(Stage::new(channels, filters, kernel, &mut rng)?);
            channels = filters;
        }
        let head = Dense::new(spec.flatten_dim(), spec.fc_width, &mut rng);
        let readout = Dense::new(spec.fc_width, spec.num_classes, &mut rng);
        Ok(Self { spec: spec.clone(), stages, flatten: Flatten::new(), head, head_relu: Relu::new(), readout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Penultimate features `g(x)`, shape `[N, fc_width]`.
    pub fn features(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = &self.spec;
        if input.rank() != 4 || input.shape()[1..] != [s.input_channels, s.input_size, s.input_size] {
            return Err(shape_err!(
                "network expects [N, {}, {}, {}], got {:?}",
                s.input_channels,
                s.input_size,
                s.input_size,
                input.shape()
            ));
        }
        let mut x = input.clone();
        for stage in &mut self.stages {
            x = stage.forward(&x, mode)?;
        }
        let x = self.flatten.forward(&x, mode)?;
        let x = self.head.forward(&x, mode)?;
        self.head_relu.forward(&x, mode)
    }

    /// `(g, logits)`.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        let g = self.features(input, mode)?;
        let logits = self.readout.forward(&g, mode)?;
        Ok((g, logits))
    }

    /// Readout applied to externally supplied features.
    pub fn logits_from_features(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        self.readout.clone().forward(g, Mode::Eval)
    }

    /// Backpropagates `d_logits` (plus `d_features`, if given, added at `g`) through the
    /// most recent forward pass. Returns the input gradient when `input_grad` is set.
    pub fn backward(
        &mut self,
        d_logits: &Tensor<T>,
        d_features: Option<&Tensor<T>>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut dg = self.readout.backward(d_logits)?;
        if let Some(extra) = d_features {
            dg = dg.zip_map(extra, |a, b| a + b)?;
        }
        let d = self.head_relu.backward(&dg)?;
        let d = self.head.backward(&d)?;
        let mut d = self.flatten.backward(&d)?;
        for (i, stage) in self.stages.iter_mut().enumerate().rev() {
            if i == 0 && !input_grad {
                stage.backward_params(&d)?;
                return Ok(None);
            }
            d = stage.backward(&d)?;
        }
        Ok(Some(d))
    }

    /// Stage by stage (conv weight, conv bias, γ, β), then head and readout.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = self.stages.iter().flat_map(|s| s.params()).collect();
        p.extend(self.head.params());
        p.extend(self.readout.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = self.stages.iter_mut().flat_map(|s| s.params_mut()).collect();
        p.extend(self.head.params_mut());
        p.extend(self.readout.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for (name, t) in stage.named_tensors() {
                out.push((format!("stage{i}.{name}"), t));
            }
        }
        out.push(("head.weight".into(), &self.head.weight.value));
        out.push(("head.bias".into(), &self.head.bias.value));
        out.push(("readout.weight".into(), &self.readout.weight.value));
        out.push(("readout.bias".into(), &self.readout.bias.value));
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("meta.spec", &self.spec.to_tensor());
        for (name, t) in self.named_tensors() {
            ck.push(name, t);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec = NetworkSpec::from_tensor(ck.require("meta.spec")?)?;
        let mut net = Self::build(&spec, 0)?;
        for (i, stage) in net.stages.iter_mut().enumerate() {
            for (name, t) in stage.named_tensors_mut() {
                ck.load_into(&format!("stage{i}.{name}"), t)?;
            }
        }
        ck.load_into("head.weight", &mut net.head.weight.value)?;
        ck.load_into("head.bias", &mut net.head.bias.value)?;
        ck.load_into("readout.weight", &mut net.readout.weight.value)?;
        ck.load_into("readout.bias", &mut net.readout.bias.value)?;
        Ok(net)
    }

    /// Fails unless `other` produces features of the same width.
    pub fn check_pairable(&self, other: &Self) -> Result<()> {
        if self.spec.fc_width != other.spec.fc_width {
            return Err(Error::Config(format!("feature widths differ: {} vs {}", self.spec.fc_width, other.spec.fc_width)));
        }
        Ok(())
    }
}
