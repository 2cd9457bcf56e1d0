//! Tools for judging how well a candidate out-of-distribution (OOD) training
//! set protects the class regions of an in-distribution task in feature
//! space.
//!
//! * [`io`]: embedding sets and their CSV / packed-binary formats.
//! * [`knn`]: exact k-NN coverage graph between in-distribution and OOD points.
//! * [`metrics`]: softmax entropy, coverage ratio, coverage distance, ranking.
//! * [`gap`]: generalization-gap criterion for augmented classifiers.
//! * [`eval`]: augmented-classifier rates, AUROC and FPR at a fixed TPR.
//! * [`toynet`]: a small MLP engine and synthetic datasets.
//! * [`adversarial`]: black-box fast-gradient-sign attacks and sweeps.
//! * [`experiments`]: the bundled desk-scale experiments.

pub mod adversarial;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod gap;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod rng;
pub mod toynet;

pub use error::{Error, Result};
pub use eval::{AugmentedEval, ScoreEval};
pub use gap::{GapScore, LossRecord};
pub use io::{EmbeddingSet, Format};
pub use knn::{Edge, KnnGraph, KnnOptions};
pub use metrics::{ClassHistogram, MetricReport, RankRule, RankedCandidate};
pub use toynet::{Mlp, ToyDataset, TrainConfig, TrainMode};
