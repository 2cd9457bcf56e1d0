//! Desk-scale experiments built on the toy engine.
//!
//! * [`two_moon`]: a vanilla MLP is over-confident far from the data, while an
//!   MLP augmented with a protective ring of OOD points rejects those regions
//!   and one augmented with a collapsed blob mostly does not.
//! * [`ranking`]: on a Gaussian-cluster task, rank OOD candidates by SE/CR/CD
//!   computed from a vanilla net and compare against the generalization-gap
//!   ranking obtained by training one augmented net per candidate.
//! * [`fgs`]: sweep black-box FGS noise and track victim error, rejection and
//!   the coverage distance of the adversaries.
//!
//! Every random draw derives from the experiment seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adversarial::{adversary_sweep, InputBox, SweepReport, SweepSetup};
use crate::error::Result;
use crate::eval::{augmented_eval, spearman, AugmentedEval};
use crate::gap::{
    gap_score_with, select_proper_ood, zero_one_in_loss, zero_one_ood_loss, GapOptions, GapScore, LossRecord,
};
use crate::io::{equalize_sizes, EmbeddingSet};
use crate::knn::build_knn_graph;
use crate::metrics::{coverage_distance, metric_report, rank_candidates, MetricReport, RankedCandidate};
use crate::rng::Rng;
use crate::toynet::{
    default_dims, far_probes, make_dataset, make_ood_candidate, make_ood_candidate_with, train, DatasetKind, Mlp,
    OodKind, OodShape, ToyDataset, TrainConfig, TrainMode,
};

fn sub_seed(seed: u64, stream: u64) -> u64 {
    Rng::derive(seed, stream).next_u64()
}

fn fit(data: &ToyDataset, ood: Option<&[Vec<f64>]>, mode: TrainMode, base: &TrainConfig, seed: u64) -> Result<Mlp> {
    let net = Mlp::new(
        &default_dims(data.dim(), mode.output_dim(data.num_classes)),
        sub_seed(seed, 1),
    )?;
    let cfg = TrainConfig {
        mode,
        seed: sub_seed(seed, 2),
        ..base.clone()
    };
    Ok(train(net, data, ood, &cfg)?.net)
}

/// Vanilla-net embeddings of `points`, carrying the net's predictions.
fn embed(net: &Mlp, name: &str, points: &[Vec<f64>], labels: Option<Vec<u32>>) -> Result<EmbeddingSet> {
    let feats = net.features_all(points)?;
    let preds = net.predict_all(points)?;
    EmbeddingSet::from_rows(name, net.output_dim(), &feats, labels, Some(preds))
}

// ---------------------------------------------------------------- two-moon

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoMoonConfig {
    pub n: usize,
    pub noise: f64,
    pub ood_size: usize,
    pub probes: usize,
    /// Probe circle radius, in data radii from the centroid.
    pub probe_distance: f64,
    pub train: TrainConfig,
}

impl Default for TwoMoonConfig {
    fn default() -> Self {
        Self {
            n: 300,
            noise: 0.1,
            ood_size: 300,
            probes: 50,
            probe_distance: 3.0,
            train: TrainConfig {
                epochs: 150,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub x: Vec<f64>,
    pub vanilla_pred: u32,
    pub vanilla_max_conf: f64,
    pub ring_pred: u32,
    pub blob_pred: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoMoonReport {
    pub seed: u64,
    pub vanilla_train_acc: f64,
    pub vanilla_mean_max_conf: f64,
    pub ring: AugmentedEval,
    pub blob: AugmentedEval,
    /// Fraction of probes sent to the rejection class.
    pub ring_probe_rejection: f64,
    pub blob_probe_rejection: f64,
    pub probes: Vec<ProbeRow>,
}

impl TwoMoonReport {
    pub fn probes_csv(&self) -> String {
        let mut out = String::from("x,y,vanilla_pred,vanilla_max_conf,ring_pred,blob_pred\n");
        for p in &self.probes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.x[0], p.x[1], p.vanilla_pred, p.vanilla_max_conf, p.ring_pred, p.blob_pred
            );
        }
        out
    }
}

pub fn two_moon(seed: u64, cfg: &TwoMoonConfig) -> Result<TwoMoonReport> {
    let data = make_dataset(DatasetKind::TwoMoons, cfg.n, cfg.noise, sub_seed(seed, 10))?;
    let ring = make_ood_candidate(OodKind::Ring, &data, cfg.ood_size, sub_seed(seed, 11))?;
    let blob = make_ood_candidate(OodKind::CollapsedBlob, &data, cfg.ood_size, sub_seed(seed, 12))?;
    let probes = far_probes(&data, cfg.probes, cfg.probe_distance, sub_seed(seed, 13));

    let vanilla = fit(&data, None, TrainMode::Vanilla, &cfg.train, sub_seed(seed, 20))?;
    let aug_ring = fit(&data, Some(&ring), TrainMode::Augmented, &cfg.train, sub_seed(seed, 21))?;
    let aug_blob = fit(&data, Some(&blob), TrainMode::Augmented, &cfg.train, sub_seed(seed, 22))?;

    let k = data.num_classes;
    let reject = k as u32;
    let vanilla_preds = vanilla.predict_all(&data.points)?;
    let vanilla_train_acc = 1.0 - zero_one_in_loss(&vanilla_preds, &data.labels)?;

    let mut rows = Vec::with_capacity(probes.len());
    for x in &probes {
        let f = vanilla.forward(x)?;
        rows.push(ProbeRow {
            x: x.clone(),
            vanilla_pred: crate::toynet::argmax(&f.probs) as u32,
            vanilla_max_conf: f.probs.iter().copied().fold(0.0, f64::max),
            ring_pred: aug_ring.predict(x)?,
            blob_pred: aug_blob.predict(x)?,
        });
    }
    let n_probes = rows.len() as f64;
    let rejection = |f: fn(&ProbeRow) -> u32| rows.iter().filter(|r| f(r) == reject).count() as f64 / n_probes;

    let eval_aug = |net: &Mlp, name: &str, ood: &[Vec<f64>]| -> Result<AugmentedEval> {
        let in_preds = net.predict_all(&data.points)?;
        let ood_preds = net.predict_all(ood)?;
        let probe_preds = net.predict_all(&probes)?;
        augmented_eval(
            &in_preds,
            &data.labels,
            &[(name, ood_preds.as_slice()), ("far_probes", probe_preds.as_slice())],
            k,
        )
    };

    Ok(TwoMoonReport {
        seed,
        vanilla_train_acc,
        vanilla_mean_max_conf: rows.iter().map(|r| r.vanilla_max_conf).sum::<f64>() / n_probes,
        ring: eval_aug(&aug_ring, "ring", &ring)?,
        blob: eval_aug(&aug_blob, "collapsed_blob", &blob)?,
        ring_probe_rejection: rejection(|r| r.ring_pred),
        blob_probe_rejection: rejection(|r| r.blob_pred),
        probes: rows,
    })
}

// ---------------------------------------------------------------- ranking

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingConfig {
    pub classes: usize,
    pub n: usize,
    pub noise: f64,
    pub ood_size: usize,
    pub k: usize,
    pub epsilon_rel: f64,
    pub lambda: f64,
    /// Held-out probe circle radius, in data radii.
    pub probe_distance: f64,
    pub shape: OodShape,
    pub train: TrainConfig,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            n: 400,
            noise: 0.5,
            ood_size: 200,
            k: crate::metrics::DEFAULT_K,
            epsilon_rel: crate::metrics::DEFAULT_EPSILON_REL,
            lambda: crate::gap::DEFAULT_LAMBDA,
            probe_distance: 2.0,
            // Clusters are compact relative to their spread, so the ring
            // hugs them more tightly than on two-moons.
            shape: OodShape {
                ring_margin: 0.15,
                ..OodShape::default()
            },
            // Cluster inputs sit about 3 units out and the noise cloud far
            // beyond; the default step size is unstable at that scale.
            train: TrainConfig {
                epochs: 300,
                lr: 0.01,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub name: String,
    pub losses: LossRecord,
    pub gap: GapScore,
    /// Mean rejection over the held-out OOD sets other than the seen kind.
    pub mean_unseen_rejection: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub seed: u64,
    pub reports: Vec<MetricReport>,
    pub metric_ranking: Vec<RankedCandidate>,
    pub outcomes: Vec<CandidateOutcome>,
    /// Candidate names by ascending gap objective.
    pub gap_ranking: Vec<String>,
    pub metric_winner: String,
    pub gap_winner: String,
    pub top_agree: bool,
    /// Spearman correlation between the positions in the two rankings.
    pub spearman: f64,
    /// Candidate names by descending mean unseen rejection.
    pub rejection_ranking: Vec<String>,
    /// Spearman correlation between the metric and rejection rankings.
    pub rejection_spearman: f64,
}

pub fn ranking(seed: u64, cfg: &RankingConfig) -> Result<RankingReport> {
    let kind = DatasetKind::GaussianClusters { classes: cfg.classes };
    let data = make_dataset(kind, cfg.n, cfg.noise, sub_seed(seed, 30))?;
    let val = make_dataset(kind, cfg.n, cfg.noise, sub_seed(seed, 31))?;

    let candidates: Vec<(OodKind, Vec<Vec<f64>>)> = OodKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            Ok((
                k,
                make_ood_candidate_with(k, &data, cfg.ood_size, sub_seed(seed, 40 + i as u64), &cfg.shape)?,
            ))
        })
        .collect::<Result<_>>()?;
    // Fresh draws of every kind plus far probes serve as held-out OOD sets.
    let mut held_out: Vec<(String, Vec<Vec<f64>>)> = OodKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            Ok((
                k.name().to_string(),
                make_ood_candidate_with(k, &data, cfg.ood_size, sub_seed(seed, 50 + i as u64), &cfg.shape)?,
            ))
        })
        .collect::<Result<_>>()?;
    held_out.push((
        "far_probes".to_string(),
        far_probes(&data, cfg.ood_size, cfg.probe_distance, sub_seed(seed, 59)),
    ));

    // Protectiveness metrics from one vanilla network.
    let vanilla = fit(&data, None, TrainMode::Vanilla, &cfg.train, sub_seed(seed, 60))?;
    let in_emb = embed(&vanilla, "in_distribution", &data.points, Some(data.labels.clone()))?;
    let ood_embs: Vec<EmbeddingSet> = candidates
        .iter()
        .map(|(k, pts)| embed(&vanilla, k.name(), pts, None))
        .collect::<Result<_>>()?;
    let ood_embs = equalize_sizes(&ood_embs, sub_seed(seed, 61))?;
    let reports: Vec<MetricReport> = ood_embs
        .iter()
        .map(|o| metric_report(&in_emb, o, cfg.k))
        .collect::<Result<_>>()?;
    let metric_ranking = rank_candidates(&reports, cfg.epsilon_rel)?;

    // Gap-criterion oracle: one augmented network per candidate.
    let reject = cfg.classes as u32;
    let mut outcomes = Vec::with_capacity(candidates.len());
    for (i, (kind, pts)) in candidates.iter().enumerate() {
        let net = fit(
            &data,
            Some(pts),
            TrainMode::Augmented,
            &cfg.train,
            sub_seed(seed, 70 + i as u64),
        )?;
        let in_train_loss = zero_one_in_loss(&net.predict_all(&data.points)?, &data.labels)?;
        let in_val_loss = zero_one_in_loss(&net.predict_all(&val.points)?, &val.labels)?;
        let ood_train_loss = zero_one_ood_loss(&net.predict_all(pts)?, reject)?;
        let mut per_out = BTreeMap::new();
        for (name, set) in &held_out {
            per_out.insert(name.clone(), zero_one_ood_loss(&net.predict_all(set)?, reject)?);
        }
        let unseen: Vec<f64> = per_out
            .iter()
            .filter(|(n, _)| n.as_str() != kind.name())
            .map(|(_, l)| 1.0 - l)
            .collect();
        let losses = LossRecord {
            in_train_loss,
            in_val_loss,
            ood_train_loss,
            per_out_val_losses: per_out,
            seen: Some(kind.name().to_string()),
        };
        let gap = gap_score_with(
            &losses,
            GapOptions {
                lambda: cfg.lambda,
                ..GapOptions::default()
            },
        )?;
        outcomes.push(CandidateOutcome {
            name: kind.name().to_string(),
            losses,
            gap,
            mean_unseen_rejection: unseen.iter().sum::<f64>() / unseen.len() as f64,
        });
    }

    let mut gap_ranking: Vec<&CandidateOutcome> = outcomes.iter().collect();
    gap_ranking.sort_by(|a, b| {
        a.gap
            .objective
            .total_cmp(&b.gap.objective)
            .then_with(|| a.name.cmp(&b.name))
    });
    let gap_ranking: Vec<String> = gap_ranking.into_iter().map(|o| o.name.clone()).collect();
    let scores: BTreeMap<String, GapScore> = outcomes.iter().map(|o| (o.name.clone(), o.gap.clone())).collect();
    let gap_winner = select_proper_ood(&scores)?.to_string();

    let position = |list: &[String], name: &str| list.iter().position(|n| n == name).unwrap() as f64;
    let metric_names: Vec<String> = metric_ranking.iter().map(|r| r.name.clone()).collect();
    let mut rejection_ranking: Vec<&CandidateOutcome> = outcomes.iter().collect();
    rejection_ranking.sort_by(|a, b| {
        b.mean_unseen_rejection
            .total_cmp(&a.mean_unseen_rejection)
            .then_with(|| a.name.cmp(&b.name))
    });
    let rejection_ranking: Vec<String> = rejection_ranking.into_iter().map(|o| o.name.clone()).collect();
    let agreement = |other: &[String]| {
        let (a, b): (Vec<f64>, Vec<f64>) = metric_names
            .iter()
            .map(|n| (position(&metric_names, n), position(other, n)))
            .unzip();
        spearman(&a, &b)
    };
    let metric_winner = metric_names[0].clone();

    Ok(RankingReport {
        seed,
        reports,
        top_agree: metric_winner == gap_winner,
        spearman: agreement(&gap_ranking)?,
        rejection_spearman: agreement(&rejection_ranking)?,
        rejection_ranking,
        metric_ranking,
        outcomes,
        gap_ranking,
        metric_winner,
        gap_winner,
    })
}

// ---------------------------------------------------------------- fgs

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FgsConfig {
    pub n: usize,
    pub n_test: usize,
    pub noise: f64,
    pub ood_size: usize,
    pub k: usize,
    pub alphas: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for FgsConfig {
    fn default() -> Self {
        Self {
            n: 300,
            n_test: 200,
            noise: 0.1,
            ood_size: 300,
            k: crate::metrics::DEFAULT_K,
            alphas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            train: TrainConfig {
                epochs: 150,
                ..TrainConfig::default()
            },
        }
    }
}

pub fn fgs(seed: u64, cfg: &FgsConfig) -> Result<SweepReport> {
    let data = make_dataset(DatasetKind::TwoMoons, cfg.n, cfg.noise, sub_seed(seed, 80))?;
    let test = make_dataset(DatasetKind::TwoMoons, cfg.n_test, cfg.noise, sub_seed(seed, 81))?;
    let ring = make_ood_candidate(OodKind::Ring, &data, cfg.ood_size, sub_seed(seed, 82))?;

    let victim = fit(&data, None, TrainMode::Vanilla, &cfg.train, sub_seed(seed, 90))?;
    let surrogate = fit(&data, None, TrainMode::Vanilla, &cfg.train, sub_seed(seed, 91))?;
    let augmented = fit(&data, Some(&ring), TrainMode::Augmented, &cfg.train, sub_seed(seed, 92))?;

    let reference = embed(&victim, "in_distribution", &data.points, Some(data.labels.clone()))?;
    let ring_emb = embed(&victim, "ring", &ring, None)?;
    let protective_cd = coverage_distance(&build_knn_graph(&reference, &ring_emb, cfg.k)?);
    let input_box = InputBox::around(&test);
    let setup = SweepSetup {
        surrogate: &surrogate,
        victim_vanilla: &victim,
        victim_augmented: &augmented,
        reference: &reference,
        k: cfg.k,
        input_box: &input_box,
        protective_cd: Some(protective_cd),
    };
    adversary_sweep(&setup, &test, &cfg.alphas)
}
