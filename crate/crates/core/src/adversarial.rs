//! Black-box fast-gradient-sign (FGS) adversaries.
//!
//! Perturbations are computed on a surrogate network and then fed to separate
//! victim networks. `sign(0)` is taken as 0, so flat coordinates stay put.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::knn::build_knn_graph;
use crate::metrics::coverage_distance;
use crate::toynet::{Mlp, Target, ToyDataset};

/// Per-coordinate clipping bounds for perturbed inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    /// `[min - 3 std, max + 3 std]` per coordinate of `data`.
    pub fn around(data: &ToyDataset) -> Self {
        let (lo, hi) = data.bounds();
        let std = data.std();
        Self {
            lo: lo.iter().zip(&std).map(|(l, s)| l - 3.0 * s).collect(),
            hi: hi.iter().zip(&std).map(|(h, s)| h + 3.0 * s).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| v >= l && v <= h)
    }
}

/// `clip(x + alpha * sign(grad_x CE(surrogate(x), y)), input_box)`.
pub fn fgs_attack(surrogate: &Mlp, x: &[f64], y: u32, alpha: f64, input_box: &InputBox) -> Result<Vec<f64>> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::arg(format!("alpha = {alpha} must be non-negative")));
    }
    if x.len() != input_box.lo.len() {
        return Err(Error::invalid(format!(
            "input has {} features, box has {}",
            x.len(),
            input_box.lo.len()
        )));
    }
    if !input_box.contains(x) {
        return Err(Error::arg("input lies outside the input box"));
    }
    let (_, _, grad) = surrogate.backprop(x, Target::Class(y as usize))?;
    Ok(x.iter()
        .zip(&grad)
        .zip(input_box.lo.iter().zip(&input_box.hi))
        .map(|((v, g), (lo, hi))| {
            let s = if *g > 0.0 {
                1.0
            } else if *g < 0.0 {
                -1.0
            } else {
                0.0
            };
            (v + alpha * s).clamp(*lo, *hi)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgsBatch {
    pub originals: Vec<Vec<f64>>,
    pub perturbed: Vec<Vec<f64>>,
    pub alpha: f64,
    pub surrogate_id: String,
}

pub fn fgs_batch(
    surrogate: &Mlp,
    surrogate_id: &str,
    points: &[Vec<f64>],
    labels: &[u32],
    alpha: f64,
    input_box: &InputBox,
) -> Result<FgsBatch> {
    if points.len() != labels.len() {
        return Err(Error::arg("points and labels differ in length"));
    }
    let perturbed = points
        .iter()
        .zip(labels)
        .map(|(x, &y)| fgs_attack(surrogate, x, y, alpha, input_box))
        .collect::<Result<_>>()?;
    Ok(FgsBatch {
        originals: points.to_vec(),
        perturbed,
        alpha,
        surrogate_id: surrogate_id.to_string(),
    })
}

/// Networks and reference data for [`adversary_sweep`].
#[derive(Debug, Clone, Copy)]
pub struct SweepSetup<'a> {
    pub surrogate: &'a Mlp,
    /// `K`-way victim; its penultimate layer defines the feature space.
    pub victim_vanilla: &'a Mlp,
    /// `K + 1`-way victim with a rejection class.
    pub victim_augmented: &'a Mlp,
    /// In-distribution embeddings under `victim_vanilla`.
    pub reference: &'a EmbeddingSet,
    pub k: usize,
    pub input_box: &'a InputBox,
    /// CD of the augmented victim's OOD training set, reported alongside.
    pub protective_cd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub vanilla_err: f64,
    pub aug_err: f64,
    pub aug_rej: f64,
    pub cd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub protective_cd: Option<f64>,
    pub k: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,vanilla_err,aug_err,aug_rej,cd\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.alpha, r.vanilla_err, r.aug_err, r.aug_rej, r.cd
            );
        }
        out
    }
}

/// Rates of both victims and the CD of their inputs, on clean data.
pub fn evaluate_victims(setup: &SweepSetup<'_>, points: &[Vec<f64>], labels: &[u32], alpha: f64) -> Result<SweepRow> {
    let n = points.len() as f64;
    let reject = setup.victim_augmented.output_dim() as u32 - 1;
    let mut vanilla_wrong = 0usize;
    let mut aug_wrong = 0usize;
    let mut aug_rej = 0usize;
    let mut feats = Vec::with_capacity(points.len());
    for (x, &y) in points.iter().zip(labels) {
        let f = setup.victim_vanilla.forward(x)?;
        if crate::toynet::argmax(&f.probs) as u32 != y {
            vanilla_wrong += 1;
        }
        feats.push(f.features);
        let p = setup.victim_augmented.predict(x)?;
        if p == reject {
            aug_rej += 1;
        } else if p != y {
            aug_wrong += 1;
        }
    }
    let emb = EmbeddingSet::from_rows("adversaries", setup.reference.num_classes(), &feats, None, None)?;
    let graph = build_knn_graph(setup.reference, &emb, setup.k)?;
    Ok(SweepRow {
        alpha,
        vanilla_err: vanilla_wrong as f64 / n,
        aug_err: aug_wrong as f64 / n,
        aug_rej: aug_rej as f64 / n,
        cd: coverage_distance(&graph),
    })
}

/// Attacks `dataset` through the surrogate at every `alpha` and evaluates
/// both victims on the adversaries.
pub fn adversary_sweep(setup: &SweepSetup<'_>, dataset: &ToyDataset, alphas: &[f64]) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::arg("no alpha values"));
    }
    if alphas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::arg("alpha values must be sorted ascending"));
    }
    let same = |a: &Mlp, b: &Mlp| a.dims() == b.dims() && a.params() == b.params();
    if same(setup.surrogate, setup.victim_vanilla) || same(setup.surrogate, setup.victim_augmented) {
        return Err(Error::arg("surrogate must differ from the victims"));
    }
    if setup.victim_augmented.output_dim() != setup.victim_vanilla.output_dim() + 1 {
        return Err(Error::arg(
            "augmented victim needs exactly one more output than the vanilla victim",
        ));
    }
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let batch = fgs_batch(
                setup.surrogate,
                "surrogate",
                &dataset.points,
                &dataset.labels,
                alpha,
                setup.input_box,
            )?;
            evaluate_victims(setup, &batch.perturbed, &dataset.labels, alpha)
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        rows,
        protective_cd: setup.protective_cd,
        k: setup.k,
    })
}
