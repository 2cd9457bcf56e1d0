//! Protectiveness metrics of an OOD set with respect to an in-distribution
//! set: softmax-based entropy (SE), coverage ratio (CR) and coverage distance
//! (CD), plus the two-stage ranking of candidate OOD sets.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::knn::{build_knn_graph_with, KnnGraph, KnnOptions};

/// Number of nearest neighbours used when the caller does not choose one.
pub const DEFAULT_K: usize = 4;

/// Width of the relative-equality band in [`rank_candidates`].
pub const DEFAULT_EPSILON_REL: f64 = 0.05;

/// Counts of OOD samples per predicted in-distribution class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ClassHistogram {
    pub fn from_predictions(predicted: &[u32], num_classes: usize) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::Precondition("no predictions".into()));
        }
        let mut counts = vec![0u64; num_classes];
        for &p in predicted {
            let slot = counts
                .get_mut(p as usize)
                .ok_or_else(|| Error::invalid(format!("prediction {p} is not below K = {num_classes}")))?;
            *slot += 1;
        }
        Ok(Self {
            counts,
            total: predicted.len() as u64,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

pub fn class_distribution(ood_set: &EmbeddingSet) -> Result<ClassHistogram> {
    let predicted = ood_set
        .predicted()
        .ok_or_else(|| Error::Precondition(format!("OOD set {:?} carries no predictions", ood_set.name())))?;
    ClassHistogram::from_predictions(predicted, ood_set.num_classes())
}

/// Entropy in nats of the predicted-class distribution, with `0 ln 0 = 0`.
pub fn softmax_entropy(hist: &ClassHistogram) -> f64 {
    let h: f64 = hist
        .probabilities()
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    // A one-hot histogram gives -1 * ln 1 = -0.0.
    h.max(0.0)
}

/// Fraction of in-distribution points that are a neighbour of at least one
/// OOD point.
pub fn coverage_ratio(graph: &KnnGraph) -> f64 {
    let covered = graph.covered_counts().iter().filter(|&&c| c > 0).count();
    covered as f64 / graph.n_in() as f64
}

/// Mean distance from OOD points to their `k` nearest in-distribution points.
pub fn coverage_distance(graph: &KnnGraph) -> f64 {
    let total: f64 = graph.edges().iter().map(|e| e.distance).sum();
    total / (graph.k() * graph.n_ood()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ood_name: String,
    /// Softmax-based entropy, nats.
    pub se: f64,
    /// `ln K`, the largest attainable SE.
    pub se_max: f64,
    pub cr: f64,
    pub cr_percent: f64,
    pub cd: f64,
    pub k: usize,
    pub num_classes: usize,
    pub n_in: usize,
    pub n_ood: usize,
}

pub const REPORT_CSV_HEADER: &str = "ood_set,cr_pct,se,cd,cr,k,num_classes,n_in,n_ood";

impl MetricReport {
    pub fn from_parts(ood_name: impl Into<String>, hist: &ClassHistogram, graph: &KnnGraph) -> Self {
        let cr = coverage_ratio(graph);
        Self {
            ood_name: ood_name.into(),
            se: softmax_entropy(hist),
            se_max: (hist.num_classes() as f64).ln(),
            cr,
            cr_percent: cr * 100.0,
            cd: coverage_distance(graph),
            k: graph.k(),
            num_classes: hist.num_classes(),
            n_in: graph.n_in(),
            n_ood: graph.n_ood(),
        }
    }

    /// One CSV line (no newline) in [`REPORT_CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.ood_name, self.cr_percent, self.se, self.cd, self.cr, self.k, self.num_classes, self.n_in, self.n_ood
        )
    }

    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in reports {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }

    /// Parses report CSV by column name. `cr` may be given as a fraction
    /// (`cr`) or a percentage (`cr_pct`); `k`, `n_in` and `n_ood` are optional.
    pub fn from_csv(text: &str) -> Result<Vec<MetricReport>> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or(Error::NoRows)?;
        let cols: HashMap<&str, usize> = header
            .split(',')
            .map(str::trim)
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        let col = |name: &str| cols.get(name).copied();
        let need = |name: &str| col(name).ok_or_else(|| Error::invalid(format!("report CSV lacks column {name:?}")));
        let name_col = need("ood_set")?;
        let se_col = need("se")?;
        let cd_col = need("cd")?;
        let k_classes_col = need("num_classes")?;
        let (cr_col, cr_scale) = match (col("cr"), col("cr_pct")) {
            (Some(c), _) => (c, 1.0),
            (None, Some(c)) => (c, 0.01),
            (None, None) => return Err(Error::invalid("report CSV lacks column \"cr\" or \"cr_pct\"")),
        };

        let mut out = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |c: usize| {
                fields.get(c).copied().ok_or_else(|| Error::Format {
                    row,
                    msg: format!("expected at least {} fields", c + 1),
                })
            };
            let num = |c: usize| -> Result<f64> {
                let f = get(c)?;
                f.parse().map_err(|_| Error::Format {
                    row,
                    msg: format!("cannot parse number {f:?}"),
                })
            };
            let opt_int = |name: &str, default: usize| -> Result<usize> {
                match col(name) {
                    Some(c) => num(c).map(|v| v as usize),
                    None => Ok(default),
                }
            };
            let num_classes = num(k_classes_col)? as usize;
            let cr = num(cr_col)? * cr_scale;
            out.push(MetricReport {
                ood_name: get(name_col)?.to_string(),
                se: num(se_col)?,
                se_max: (num_classes as f64).ln(),
                cr,
                cr_percent: cr * 100.0,
                cd: num(cd_col)?,
                k: opt_int("k", DEFAULT_K)?,
                num_classes,
                n_in: opt_int("n_in", 0)?,
                n_ood: opt_int("n_ood", 0)?,
            });
        }
        if out.is_empty() {
            return Err(Error::NoRows);
        }
        Ok(out)
    }
}

pub fn metric_report(in_set: &EmbeddingSet, ood_set: &EmbeddingSet, k: usize) -> Result<MetricReport> {
    metric_report_with(in_set, ood_set, k, KnnOptions::default())
}

pub fn metric_report_with(
    in_set: &EmbeddingSet,
    ood_set: &EmbeddingSet,
    k: usize,
    opts: KnnOptions,
) -> Result<MetricReport> {
    if in_set.num_classes() != ood_set.num_classes() {
        return Err(Error::invalid(format!(
            "class count mismatch: in-distribution K = {}, OOD set {:?} K = {}",
            in_set.num_classes(),
            ood_set.name(),
            ood_set.num_classes()
        )));
    }
    let hist = class_distribution(ood_set)?;
    let graph = build_knn_graph_with(in_set, ood_set, k, opts)?;
    Ok(MetricReport::from_parts(ood_set.name(), &hist, &graph))
}

/// Which rule placed a ranked candidate directly below its predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankRule {
    /// Only candidate.
    Singleton,
    /// First place.
    Leader,
    /// Decided by SE and CR.
    SeCr,
    /// SE and CR relatively equal; smaller CD won.
    CdTiebreak,
}

impl RankRule {
    pub fn tag(self) -> &'static str {
        match self {
            RankRule::Singleton => "singleton",
            RankRule::Leader => "leader",
            RankRule::SeCr => "se-cr",
            RankRule::CdTiebreak => "cd-tiebreak",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub name: String,
    /// `(se / ln K + cr) / 2`.
    pub score: f64,
    pub se: f64,
    pub cr: f64,
    pub cd: f64,
    pub rule: RankRule,
}

/// Orders candidates from most to least protective.
///
/// Candidates are scored by `(se / ln K + cr) / 2`. Working down from the
/// top, the remaining candidates whose SE and CR are both within
/// `epsilon_rel` (relative) of the best remaining SE and best remaining CR
/// form a band of relatively equal leaders; the band is placed next, ordered
/// by ascending CD. If no candidate is in the band, the best-scoring one is
/// placed next. Remaining ties fall back to score, then name.
pub fn rank_candidates(reports: &[MetricReport], epsilon_rel: f64) -> Result<Vec<RankedCandidate>> {
    let first = reports.first().ok_or_else(|| Error::arg("no reports to rank"))?;
    if !(0.0..1.0).contains(&epsilon_rel) {
        return Err(Error::arg(format!("epsilon_rel = {epsilon_rel} is outside [0, 1)")));
    }
    if let Some(r) = reports.iter().find(|r| r.num_classes != first.num_classes) {
        return Err(Error::arg(format!(
            "mixed class counts: {:?} has K = {}, {:?} has K = {}",
            first.ood_name, first.num_classes, r.ood_name, r.num_classes
        )));
    }
    if let Some(r) = reports.iter().find(|r| r.k != first.k) {
        return Err(Error::arg(format!(
            "mixed neighbour counts: {:?} has k = {}, {:?} has k = {}",
            first.ood_name, first.k, r.ood_name, r.k
        )));
    }

    let ln_k = (first.num_classes as f64).ln();
    let score = |r: &MetricReport| {
        let se_norm = if ln_k > 0.0 { r.se / ln_k } else { 0.0 };
        (se_norm + r.cr) / 2.0
    };
    let by_score =
        |a: &&MetricReport, b: &&MetricReport| score(b).total_cmp(&score(a)).then_with(|| a.ood_name.cmp(&b.ood_name));

    let mut remaining: Vec<&MetricReport> = reports.iter().collect();
    remaining.sort_by(by_score);
    let mut out: Vec<RankedCandidate> = Vec::with_capacity(reports.len());

    while !remaining.is_empty() {
        let best_se = remaining.iter().map(|r| r.se).fold(f64::NEG_INFINITY, f64::max);
        let best_cr = remaining.iter().map(|r| r.cr).fold(f64::NEG_INFINITY, f64::max);
        let near = |v: f64, best: f64| v >= best - epsilon_rel * best.abs();
        let (mut band, rest): (Vec<_>, Vec<_>) = remaining
            .iter()
            .partition(|r| near(r.se, best_se) && near(r.cr, best_cr));
        if band.is_empty() {
            band.push(remaining[0]);
            remaining.remove(0);
        } else {
            remaining = rest;
            band.sort_by(|a, b| a.cd.total_cmp(&b.cd).then_with(|| by_score(a, b)));
        }
        for (pos, r) in band.iter().enumerate() {
            let rule = match (out.is_empty(), pos) {
                (true, _) if reports.len() == 1 => RankRule::Singleton,
                (true, 0) => RankRule::Leader,
                (false, 0) => RankRule::SeCr,
                _ => RankRule::CdTiebreak,
            };
            out.push(RankedCandidate {
                name: r.ood_name.clone(),
                score: score(r),
                se: r.se,
                cr: r.cr,
                cd: r.cd,
                rule,
            });
        }
    }
    Ok(out)
}
