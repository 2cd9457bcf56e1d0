//! Fixtures shared by the criterion benches.

use oodp_core::rng::Rng;
use oodp_core::EmbeddingSet;

/// `n` Gaussian vectors of dimension `dim`, with predictions cycling over `classes`.
pub fn gaussian_set(name: &str, n: usize, dim: usize, classes: usize, seed: u64) -> EmbeddingSet {
    let mut rng = Rng::new(seed);
    let data = (0..n * dim).map(|_| rng.normal() as f32).collect();
    let preds = (0..n as u32).map(|i| i % classes as u32).collect();
    EmbeddingSet::new(name, dim, classes, data, None, Some(preds)).expect("valid fixture")
}

pub fn scores(n: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.normal() + shift).collect()
}
