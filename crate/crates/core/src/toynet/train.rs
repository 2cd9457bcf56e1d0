use serde::{Deserialize, Serialize};

use super::data::ToyDataset;
use super::mlp::{Gradients, Mlp, Target};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Cross-entropy over the `K` in-distribution classes.
    Vanilla,
    /// Cross-entropy over `K + 1` outputs; OOD samples carry label `K`.
    Augmented,
    /// In-distribution cross-entropy plus `beta` times the cross-entropy of
    /// OOD outputs against the uniform distribution.
    Calibrated,
}

impl TrainMode {
    pub fn needs_ood(self) -> bool {
        !matches!(self, TrainMode::Vanilla)
    }

    /// Output width for a `num_classes`-class task.
    pub fn output_dim(self, num_classes: usize) -> usize {
        match self {
            TrainMode::Augmented => num_classes + 1,
            _ => num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Weight of the OOD term in calibrated mode.
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
            mode: TrainMode::Vanilla,
            beta: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("epochs and batch size must be positive"));
        }
        if self.mode.needs_ood() && self.batch_size < 2 {
            return Err(Error::arg("OOD modes need a batch size of at least 2"));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must be in [0, 1)"));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::arg("beta must be non-negative"));
        }
        Ok(())
    }
}

/// Training objective over one batch and its gradient.
///
/// The in-distribution term is the mean cross-entropy over `inputs`. In the
/// OOD modes a second term is added: the mean cross-entropy of `ood` towards
/// the rejection class (augmented), or `beta` times the mean cross-entropy of
/// `ood` towards the uniform distribution (calibrated).
pub fn batch_objective(
    net: &Mlp,
    inputs: &[&[f64]],
    labels: &[u32],
    ood: &[&[f64]],
    mode: TrainMode,
    beta: f64,
) -> Result<(f64, Gradients)> {
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    if !inputs.is_empty() {
        let scale = 1.0 / inputs.len() as f64;
        for (x, &y) in inputs.iter().zip(labels) {
            loss += scale * net.backprop_into(x, Target::Class(y as usize), scale, &mut grads)?.0;
        }
    }
    if mode.needs_ood() && !ood.is_empty() {
        let (target, weight) = match mode {
            TrainMode::Augmented => (Target::Class(net.output_dim() - 1), 1.0),
            _ => (Target::Uniform, beta),
        };
        let scale = weight / ood.len() as f64;
        if scale > 0.0 {
            for x in ood {
                loss += scale * net.backprop_into(x, target, scale, &mut grads)?.0;
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: Mlp,
    /// 0-1 loss on the training in-distribution set.
    pub in_train_loss: f64,
    /// Fraction of the training OOD set not sent to the rejection class
    /// (augmented mode only).
    pub ood_train_loss: Option<f64>,
    /// Objective over the whole training data after the last epoch.
    pub final_objective: f64,
}

/// Mini-batch SGD with momentum (`v = mu v + g`, `theta -= lr v`).
///
/// In the OOD modes each batch holds `batch_size / 2` in-distribution samples
/// and as many OOD samples, the latter cycling through a reshuffled OOD set.
/// An epoch is one pass over the in-distribution data.
pub fn train(net: Mlp, data_in: &ToyDataset, data_ood: Option<&[Vec<f64>]>, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let ood = match (cfg.mode.needs_ood(), data_ood) {
        (true, Some(o)) if !o.is_empty() => o,
        (true, _) => return Err(Error::Precondition(format!("{:?} training needs OOD data", cfg.mode))),
        (false, _) => &[][..],
    };
    let want_out = cfg.mode.output_dim(data_in.num_classes);
    if net.output_dim() != want_out {
        return Err(Error::arg(format!(
            "{:?} training on {} classes needs {want_out} outputs, network has {}",
            cfg.mode,
            data_in.num_classes,
            net.output_dim()
        )));
    }
    if net.input_dim() != data_in.dim() {
        return Err(Error::invalid("network input width does not match the data"));
    }
    if data_in.is_empty() {
        return Err(Error::arg("empty training set"));
    }

    let mut net = net;
    let mut rng = Rng::new(cfg.seed);
    let in_per_batch = if cfg.mode.needs_ood() {
        cfg.batch_size / 2
    } else {
        cfg.batch_size
    };
    let ood_per_batch = cfg.batch_size - in_per_batch;
    let mut order: Vec<usize> = (0..data_in.len()).collect();
    let mut ood_order: Vec<usize> = (0..ood.len()).collect();
    let mut ood_pos = ood_order.len();
    let mut velocity = net.zero_grads();

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(in_per_batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data_in.points[i].as_slice()).collect();
            let ys: Vec<u32> = chunk.iter().map(|&i| data_in.labels[i]).collect();
            let mut os: Vec<&[f64]> = Vec::with_capacity(ood_per_batch);
            if !ood.is_empty() {
                for _ in 0..ood_per_batch {
                    if ood_pos == ood_order.len() {
                        rng.shuffle(&mut ood_order);
                        ood_pos = 0;
                    }
                    os.push(&ood[ood_order[ood_pos]]);
                    ood_pos += 1;
                }
            }
            let (_, g) = batch_objective(&net, &xs, &ys, &os, cfg.mode, cfg.beta)?;
            let mut next = g;
            next.add_scaled(&velocity, cfg.momentum);
            velocity = next;
            net.step(&velocity, cfg.lr);
        }
    }

    let all_in: Vec<&[f64]> = data_in.points.iter().map(Vec::as_slice).collect();
    let all_ood: Vec<&[f64]> = ood.iter().map(Vec::as_slice).collect();
    let (final_objective, _) = batch_objective(&net, &all_in, &data_in.labels, &all_ood, cfg.mode, cfg.beta)?;
    let preds = net.predict_all(&data_in.points)?;
    let in_train_loss = crate::gap::zero_one_in_loss(&preds, &data_in.labels)?;
    let ood_train_loss = match cfg.mode {
        TrainMode::Augmented => Some(crate::gap::zero_one_ood_loss(
            &net.predict_all(ood)?,
            data_in.num_classes as u32,
        )?),
        _ => None,
    };
    Ok(Trained {
        net,
        in_train_loss,
        ood_train_loss,
        final_objective,
    })
}
