//! Dataset ingestion and the two input pipelines (fine RGB, coarse grayscale).

mod batch;
pub mod cifar;
pub mod pgm;
pub mod preprocess;
pub mod subset;
pub mod synthetic;

pub use batch::batches;
pub use cifar::{load_cifar10, load_cifar100, CifarSplits};
pub use pgm::load_mask_dataset;
pub use preprocess::{binarize, gaussian_kernel, gaussian_lowpass, to_grayscale, ChannelStats, InputPipeline, Prepared};
pub use subset::{sample_superclass_subset, select_classes, SuperclassSubset};

use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 32;

/// One image with pixels in `[0, 1]` and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `[C, 32, 32]`, channel-planar.
    pub pixels: Tensor<f32>,
    pub fine_label: usize,
    /// Present only for CIFAR-100 style data.
    pub coarse_label: Option<usize>,
}

/// An ordered list of images plus the raw per-channel statistics used for normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub images: Vec<LabeledImage>,
    pub class_names: Vec<String>,
    pub stats: ChannelStats,
}

impl DatasetSplit {
    /// Builds a split whose statistics are computed from its own images.
    pub fn new(images: Vec<LabeledImage>, class_names: Vec<String>) -> Self {
        let stats = ChannelStats::fit(images.iter().map(|im| &im.pixels));
        Self { images, class_names, stats }
    }

    /// Builds a split that reuses statistics computed elsewhere (the training split).
    pub fn with_stats(images: Vec<LabeledImage>, class_names: Vec<String>, stats: ChannelStats) -> Self {
        Self { images, class_names, stats }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|im| im.fine_label).collect()
    }

    pub fn coarse_labels(&self) -> Option<Vec<usize>> {
        self.images.iter().map(|im| im.coarse_label).collect()
    }

    pub fn channels(&self) -> usize {
        self.images.first().map_or(0, |im| im.pixels.dim(0))
    }

    /// Keeps the first `n` images.
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self
    }
}

/// A split pushed through a pipeline: one `[N, C, H, W]` tensor of network inputs plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Encoded {
    pub fn new(prepared: &Prepared, images: &[LabeledImage]) -> crate::Result<Self> {
        let inputs = prepared.batch(images.iter().map(|im| &im.pixels))?;
        Ok(Self { inputs, labels: images.iter().map(|im| im.fine_label).collect() })
    }

    pub fn from_parts(inputs: Tensor<f32>, labels: Vec<usize>) -> crate::Result<Self> {
        if inputs.rank() != 4 || inputs.dim(0) != labels.len() {
            return Err(crate::error::shape_err!("{} labels for inputs {:?}", labels.len(), inputs.shape()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Inputs at `indices`, stacked in order and converted to `T`.
    pub fn gather<T: crate::Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let row = self.inputs.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend(self.inputs.row(i).iter().map(|&v| T::lit(f64::from(v))));
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(&shape, data).expect("gathered rows match shape")
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
