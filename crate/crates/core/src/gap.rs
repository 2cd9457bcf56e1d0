//! Generalization-gap criterion for choosing an OOD training set.
//!
//! An augmented classifier has `K + 1` outputs; index `K` is the rejection
//! class. Its quality with a given OOD training set is judged by the gap
//! between training and held-out 0-1 losses, in-distribution and on each
//! out-distribution. The proper OOD set minimizes
//! `in_gap + lambda * ood_gap`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Fraction of in-distribution samples whose prediction differs from the
/// label. Predicting the rejection class counts as a miss.
pub fn zero_one_in_loss(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::arg("no predictions"));
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// Fraction of OOD samples not sent to `rejection_class`.
pub fn zero_one_ood_loss(predictions: &[u32], rejection_class: u32) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::arg("no predictions"));
    }
    let missed = predictions.iter().filter(|&&p| p != rejection_class).count();
    Ok(missed as f64 / predictions.len() as f64)
}

/// Empirical 0-1 losses of one augmented classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub in_train_loss: f64,
    pub in_val_loss: f64,
    /// Loss on the OOD set the classifier was trained with.
    pub ood_train_loss: f64,
    /// Held-out loss per out-distribution, by name.
    pub per_out_val_losses: BTreeMap<String, f64>,
    /// Name of the out-distribution used for training, if it appears in
    /// `per_out_val_losses`.
    #[serde(default)]
    pub seen: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Sum of the out-distribution gaps.
    #[default]
    Sum,
    /// Largest out-distribution gap.
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapOptions {
    pub lambda: f64,
    pub aggregation: Aggregation,
    /// Leave the seen out-distribution out of the OOD gap.
    pub exclude_seen: bool,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            aggregation: Aggregation::Sum,
            exclude_seen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScore {
    pub in_gap: f64,
    /// Aggregated OOD gap (a sum by default, see `aggregation`).
    pub ood_gap_sum: f64,
    pub lambda: f64,
    pub objective: f64,
    /// Number of out-distributions aggregated.
    pub b: usize,
    pub aggregation: Aggregation,
}

pub fn gap_score(record: &LossRecord, lambda: f64) -> Result<GapScore> {
    gap_score_with(
        record,
        GapOptions {
            lambda,
            ..GapOptions::default()
        },
    )
}

pub fn gap_score_with(record: &LossRecord, opts: GapOptions) -> Result<GapScore> {
    if opts.lambda.is_nan() || opts.lambda <= 0.0 || !opts.lambda.is_finite() {
        return Err(Error::arg(format!("lambda = {} must be positive", opts.lambda)));
    }
    let gaps: Vec<f64> = record
        .per_out_val_losses
        .iter()
        .filter(|(name, _)| !(opts.exclude_seen && record.seen.as_deref() == Some(name.as_str())))
        .map(|(_, &val)| (record.ood_train_loss - val).abs())
        .collect();
    if gaps.is_empty() {
        return Err(Error::arg("no out-distribution validation losses"));
    }
    let ood_gap_sum = match opts.aggregation {
        Aggregation::Sum => gaps.iter().sum(),
        Aggregation::Sup => gaps.iter().copied().fold(0.0, f64::max),
    };
    let in_gap = (record.in_train_loss - record.in_val_loss).abs();
    Ok(GapScore {
        in_gap,
        ood_gap_sum,
        lambda: opts.lambda,
        objective: in_gap + opts.lambda * ood_gap_sum,
        b: gaps.len(),
        aggregation: opts.aggregation,
    })
}

/// Name with the smallest objective; equal objectives resolve to the
/// lexicographically smallest name.
pub fn select_proper_ood(scores: &BTreeMap<String, GapScore>) -> Result<&str> {
    let mut best: Option<(&String, f64)> = None;
    for (name, s) in scores {
        // BTreeMap iterates in name order, so strict `<` keeps the first name on ties.
        if best.is_none_or(|(_, obj)| s.objective < obj) {
            best = Some((name, s.objective));
        }
    }
    best.map(|(n, _)| n.as_str())
        .ok_or_else(|| Error::arg("no gap scores to choose from"))
}
