use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathwayKind {
    Fine,
    Coarse,
}

/// Architecture of one pathway: conv stages, feature width and class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub kind: PathwayKind,
    /// `(filters, kernel)` per stage.
    pub stages: Vec<(usize, usize)>,
    pub fc_width: usize,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_size: usize,
}

impl NetworkSpec {
    /// Three stages of 128 3×3 filters on RGB input.
    pub fn fine(num_classes: usize) -> Self {
        Self {
            kind: PathwayKind::Fine,
            stages: vec![(128, 3); 3],
            fc_width: 1000,
            num_classes,
            input_channels: 3,
            input_size: 32,
        }
    }

    /// 64 11×11 filters then 128 9×9 filters on grayscale input.
    pub fn coarse(num_classes: usize) -> Self {
        Self {
            kind: PathwayKind::Coarse,
            stages: vec![(64, 11), (128, 9)],
            fc_width: 1000,
            num_classes,
            input_channels: 1,
            input_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(invalid!("network needs at least one stage"));
        }
        for &(filters, kernel) in &self.stages {
            if filters == 0 {
                return Err(invalid!("stage with zero filters"));
            }
            if kernel % 2 == 0 {
                return Err(invalid!("kernel size {kernel} is not odd"));
            }
        }
        if !self.input_size.is_multiple_of(1 << self.stages.len()) {
            return Err(invalid!("{} stages cannot halve a {}-pixel input to a whole size", self.stages.len(), self.input_size));
        }
        if self.fc_width == 0 || self.num_classes == 0 || self.input_channels == 0 {
            return Err(invalid!("fc_width, num_classes and input_channels must be positive"));
        }
        Ok(())
    }

    /// Spatial size after the last stage.
    pub fn final_size(&self) -> usize {
        self.input_size >> self.stages.len()
    }

    /// Width of the flattened trunk output feeding the feature head.
    pub fn flatten_dim(&self) -> usize {
        let filters = self.stages.last().map_or(self.input_channels, |s| s.0);
        filters * self.final_size() * self.final_size()
    }

    /// Trainable scalar count: conv weights and biases, batch-norm γ and β, head, readout.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut c = self.input_channels;
        for &(f, k) in &self.stages {
            total += f * c * k * k + f + 2 * f;
            c = f;
        }
        total + self.flatten_dim() * self.fc_width + self.fc_width + self.fc_width * self.num_classes + self.num_classes
    }

    /// Flat integer encoding stored alongside checkpoints.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut v = vec![
            match self.kind {
                PathwayKind::Fine => 0.0,
                PathwayKind::Coarse => 1.0,
            },
            self.input_channels as f32,
            self.input_size as f32,
            self.fc_width as f32,
            self.num_classes as f32,
            self.stages.len() as f32,
        ];
        for &(f, k) in &self.stages {
            v.push(f as f32);
            v.push(k as f32);
        }
        let n = v.len();
        Tensor::new(&[n], v).expect("non-empty")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let bad = || Error::Checkpoint("malformed network spec".into());
        let v: Vec<usize> = t
            .data()
            .iter()
            .map(|&x| if x >= 0.0 && x.fract() == 0.0 { Some(x as usize) } else { None })
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        if v.len() < 6 || v.len() != 6 + 2 * v[5] {
            return Err(bad());
        }
        let kind = match v[0] {
            0 => PathwayKind::Fine,
            1 => PathwayKind::Coarse,
            _ => return Err(bad()),
        };
        let spec = Self {
            kind,
            input_channels: v[1],
            input_size: v[2],
            fc_width: v[3],
            num_classes: v[4],
            stages: v[6..].chunks(2).map(|c| (c[0], c[1])).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_flatten_widths() {
        assert_eq!(NetworkSpec::fine(10).flatten_dim(), 4 * 4 * 128);
        assert_eq!(NetworkSpec::coarse(10).flatten_dim(), 8 * 8 * 128);
        assert_eq!(NetworkSpec::coarse(10).stages[0], (64, 11));
    }

    #[test]
    fn fine_parameter_count_by_hand() {
        // stage 1: 128·3·9 + 128 + 256; stages 2-3: 128·128·9 + 128 + 256 each
        let trunk = (3456 + 384) + 2 * (147_456 + 384);
        let head = 2048 * 1000 + 1000;
        let readout = 1000 * 10 + 10;
        assert_eq!(NetworkSpec::fine(10).param_count(), trunk + head + readout);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = NetworkSpec::fine(10);
        s.stages[1].1 = 4;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::fine(10);
        s.stages = vec![(8, 3); 6];
        assert!(s.validate().is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let s = NetworkSpec::coarse(25);
        assert_eq!(NetworkSpec::from_tensor(&s.to_tensor()).unwrap(), s);
        assert!(NetworkSpec::from_tensor(&Tensor::new(&[2], vec![0.0, 1.5]).unwrap()).is_err());
    }
}
