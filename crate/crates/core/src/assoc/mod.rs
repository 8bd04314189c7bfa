//! RBM associative memory coupling the two pathways.

mod memory;
mod rbm;
mod tasks;

pub use memory::{make_context_vectors, snap_to_codebook, AssociativeMemory, NormStats};
pub use rbm::{cosine, train_rbm, ClampSide, Rbm, RbmTrainConfig};
pub use tasks::{concat_rows, retrieve_context, robustness_predict, rows_for, BiasedReadout};
