//! FineNet and CoarseNet: architecture, training (cross-entropy and feature imitation), evaluation.

mod loss;
mod network;
mod spec;
mod train;

pub use loss::{imitation_loss, ImitationLoss};
pub use network::Network;
pub use spec::{NetworkSpec, PathwayKind};
pub use train::{accuracy, evaluate_accuracy, forward_features, train_coarse, train_fine, EpochMetrics, Teacher, TrainConfig};
