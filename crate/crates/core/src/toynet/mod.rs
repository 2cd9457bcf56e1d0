//! A small from-scratch feed-forward network engine and the synthetic data it
//! trains on.
//!
//! Networks use ReLU hidden layers and a softmax output over `K` classes
//! (vanilla and calibrated) or `K + 1` classes (augmented, last index is the
//! rejection class). All arithmetic is `f64` and single-threaded, so a fixed
//! seed gives bit-identical parameters.

mod data;
mod mlp;
mod train;

pub use data::{
    far_probes, make_dataset, make_ood_candidate, make_ood_candidate_with, DatasetKind, OodKind, OodShape, ToyDataset,
    CLUSTER_RADIUS,
};
pub use mlp::{argmax, Forward, Gradients, Mlp, Target, MODEL_MAGIC, MODEL_VERSION};
pub use train::{batch_objective, train, TrainConfig, TrainMode, Trained};

/// Hidden widths of the default architecture (`d -> 32 -> 32 -> out`).
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// Layer dimensions for the default architecture.
pub fn default_dims(input: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(DEFAULT_HIDDEN);
    dims.push(output);
    dims
}
