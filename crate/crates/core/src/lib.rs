//! Two-pathway image recognition: a deep fine-input CNN, a shallow coarse-input
//! CNN, and an RBM associative memory linking their penultimate features.

pub mod assoc;
pub mod check;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod noise;
pub mod ops;
pub mod pathways;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Param, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = pathways::Network<f32>;
pub type Network64 = pathways::Network<f64>;
pub type Rbm32 = assoc::Rbm<f32>;
pub type Rbm64 = assoc::Rbm<f64>;
pub type Memory32 = assoc::AssociativeMemory<f32>;
pub type Memory64 = assoc::AssociativeMemory<f64>;
