//! Detector evaluation.
//!
//! Convention: the positive class is in-distribution. TPR is measured on
//! in-distribution scores and FPR on OOD scores, and a higher score means
//! "more in-distribution". For an augmented classifier, OOD rejection is the
//! TNR and in-distribution rejection the FNR.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TPR_TARGET: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRates {
    pub name: String,
    /// Fraction sent to the rejection class (TNR).
    pub rej: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEval {
    pub acc: f64,
    /// In-distribution samples sent to the rejection class (FNR).
    pub rej: f64,
    pub err: f64,
    pub ood: Vec<OodRates>,
}

impl AugmentedEval {
    pub fn mean_ood_rejection(&self) -> Option<f64> {
        (!self.ood.is_empty()).then(|| self.ood.iter().map(|o| o.rej).sum::<f64>() / self.ood.len() as f64)
    }
}

/// Rates of a `K + 1`-way classifier whose class `num_classes` is rejection.
pub fn augmented_eval(
    in_predictions: &[u32],
    in_labels: &[u32],
    ood_predictions: &[(&str, &[u32])],
    num_classes: usize,
) -> Result<AugmentedEval> {
    if in_predictions.len() != in_labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            in_predictions.len(),
            in_labels.len()
        )));
    }
    if in_predictions.is_empty() {
        return Err(Error::arg("no in-distribution predictions"));
    }
    if let Some(l) = in_labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::arg(format!("label {l} is not below K = {num_classes}")));
    }
    let reject = num_classes as u32;
    let n = in_predictions.len() as f64;
    let correct = in_predictions.iter().zip(in_labels).filter(|(p, l)| p == l).count();
    let rejected = in_predictions.iter().filter(|&&p| p == reject).count();
    let acc = correct as f64 / n;
    let rej = rejected as f64 / n;
    let err = (in_predictions.len() - correct - rejected) as f64 / n;

    let ood = ood_predictions
        .iter()
        .map(|(name, preds)| {
            if preds.is_empty() {
                return Err(Error::arg(format!("OOD set {name:?} has no predictions")));
            }
            let r = preds.iter().filter(|&&p| p == reject).count();
            Ok(OodRates {
                name: name.to_string(),
                rej: r as f64 / preds.len() as f64,
                err: (preds.len() - r) as f64 / preds.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AugmentedEval { acc, rej, err, ood })
}

fn check_scores(in_scores: &[f64], ood_scores: &[f64]) -> Result<()> {
    if in_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::arg("score sets must be nonempty"));
    }
    if in_scores.iter().chain(ood_scores).any(|s| s.is_nan()) {
        return Err(Error::arg("NaN score"));
    }
    Ok(())
}

/// Probability that a random in-distribution score beats a random OOD score,
/// ties counting one half. Computed from mid-ranks in exact integer
/// arithmetic, so it agrees bit-for-bit with pairwise counting.
pub fn auroc(in_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(in_scores, ood_scores)?;
    let n = in_scores.len() as u128;
    let m = ood_scores.len() as u128;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the rank sum of in-distribution scores; a tie group covering
    // 1-based ranks start+1..=end has doubled mid-rank start + 1 + end.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0usize;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let in_count = all[start..end].iter().filter(|(_, is_in)| *is_in).count() as u128;
        twice_rank_sum += in_count * (start as u128 + 1 + end as u128);
        start = end;
    }
    let twice_u = twice_rank_sum - n * (n + 1);
    Ok(twice_u as f64 / (2 * n * m) as f64)
}

/// FPR at the largest threshold whose TPR reaches `tpr_target`. Scores
/// `>= t` count as positive.
pub fn fpr_at_tpr(in_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<f64> {
    check_scores(in_scores, ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::arg(format!("tpr_target = {tpr_target} is outside (0, 1]")));
    }
    let mut desc = in_scores.to_vec();
    desc.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = desc.len() as f64;
    let mut threshold = desc[desc.len() - 1];
    let mut i = 0;
    while i < desc.len() {
        let t = desc[i];
        // Advance past the tie group: every score equal to t is >= t.
        while i < desc.len() && desc[i] == t {
            i += 1;
        }
        if i as f64 / n >= tpr_target {
            threshold = t;
            break;
        }
    }
    let fp = ood_scores
        .iter()
        .filter(|&&s| s.total_cmp(&threshold) != Ordering::Less)
        .count();
    Ok(fp as f64 / ood_scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEval {
    pub name: String,
    pub auroc: f64,
    pub fpr_at_tpr: f64,
    pub tpr_target: f64,
    pub n_in: usize,
    pub n_ood: usize,
}

pub fn score_eval(name: &str, in_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<ScoreEval> {
    Ok(ScoreEval {
        name: name.to_string(),
        auroc: auroc(in_scores, ood_scores)?,
        fpr_at_tpr: fpr_at_tpr(in_scores, ood_scores, tpr_target)?,
        tpr_target,
        n_in: in_scores.len(),
        n_ood: ood_scores.len(),
    })
}

/// Mean AUROC and FPR over the given evaluations, skipping the one named
/// `exclude` (normally the OOD set seen in training).
pub fn average_unseen(evals: &[ScoreEval], exclude: Option<&str>) -> Option<(f64, f64)> {
    let kept: Vec<&ScoreEval> = evals.iter().filter(|e| Some(e.name.as_str()) != exclude).collect();
    if kept.is_empty() {
        return None;
    }
    let n = kept.len() as f64;
    Some((
        kept.iter().map(|e| e.auroc).sum::<f64>() / n,
        kept.iter().map(|e| e.fpr_at_tpr).sum::<f64>() / n,
    ))
}

/// CSV with one row per OOD set plus an `avg` row over the unseen ones.
pub fn score_evals_to_csv(evals: &[ScoreEval], exclude: Option<&str>) -> String {
    let mut out = String::from("ood_set,auroc,fpr_at_tpr,tpr_target,n_in,n_ood\n");
    for e in evals {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.name, e.auroc, e.fpr_at_tpr, e.tpr_target, e.n_in, e.n_ood
        );
    }
    if let Some((a, f)) = average_unseen(evals, exclude) {
        let tpr = evals.first().map_or(DEFAULT_TPR_TARGET, |e| e.tpr_target);
        let _ = writeln!(out, "avg,{a},{f},{tpr},,");
    }
    out
}

/// Mid-ranks, 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            r[o] = mid;
        }
        i = j;
    }
    r
}

/// Spearman rank correlation with mid-ranks for ties. Returns 0 when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("spearman needs two equal-length sequences of length >= 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}
