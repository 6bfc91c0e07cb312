//! Optimizers and training loops: reconstructive pretraining of either layer
//! and multi-step predictive training with backprop through time.

mod bptt;
mod finite_diff;
mod optim;

pub use bptt::{rollout_loss, rollout_loss_and_grads};
pub use finite_diff::{finite_difference_grads, max_relative_error};
pub use optim::{sgd_momentum_step, SgdMomentum};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::gae::{self, GaeParams};
use crate::hgae::Model;
use crate::math::Matrix;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::sequences::SequenceSet;

/// Substream ids derived from [`TrainConfig::seed`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 1 << 20;
    pub const WINDOWS: u64 = 2 << 20;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `(first_epoch, k)` pairs; the horizon at epoch `e` is the `k` of the
    /// last entry whose `first_epoch <= e`.
    pub horizon_schedule: Vec<(usize, usize)>,
    pub l2: f64,
    pub seed: u64,
    /// When set, reports carry no wall-clock values so reruns are byte-identical.
    pub determinism: bool,
    pub max_grad_norm: Option<f64>,
    pub init_std: f64,
    /// Draw each training window at a random offset inside its sequence
    /// instead of at the start.
    pub random_windows: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            horizon_schedule: vec![(0, 1)],
            l2: 0.0,
            seed: 0,
            determinism: true,
            max_grad_norm: None,
            init_std: 0.01,
            random_windows: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(argument("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(argument("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(argument("batch_size must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(argument("l2 must be >= 0"));
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return Err(argument("max_grad_norm must be positive"));
        }
        for pair in self.horizon_schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(argument("horizon_schedule epochs must increase"));
            }
            if pair[1].1 < pair[0].1 {
                return Err(argument("horizon_schedule k values must be non-decreasing"));
            }
        }
        if self.horizon_schedule.iter().any(|&(_, k)| k == 0) {
            return Err(argument("horizon k must be at least 1"));
        }
        Ok(())
    }

    pub fn horizon_at(&self, epoch: usize) -> usize {
        self.horizon_schedule
            .iter()
            .take_while(|&&(start, _)| start <= epoch)
            .last()
            .map_or(1, |&(_, k)| k)
    }

    pub fn max_horizon(&self) -> usize {
        self.horizon_schedule.iter().map(|&(_, k)| k).max().unwrap_or(1)
    }
}

/// Parses `"0:1,400:2"` into `[(0, 1), (400, 2)]`.
pub fn parse_horizon_schedule(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let (e, k) = entry
                .split_once(':')
                .ok_or_else(|| argument(format!("bad schedule entry '{entry}'")))?;
            let e = e.trim().parse().map_err(|_| argument(format!("bad epoch in '{entry}'")))?;
            let k = k.trim().parse().map_err(|_| argument(format!("bad horizon in '{entry}'")))?;
            Ok((e, k))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub k: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    pub seconds: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Minibatch loop shared by every objective.
///
/// `batch_grads(params, indices, epoch, k)` returns the mean loss and mean
/// gradient over the samples in `indices`.
pub fn run_epochs<P: ParamSet>(
    params: &mut P,
    num_samples: usize,
    cfg: &TrainConfig,
    mut batch_grads: impl FnMut(&P, &[usize], usize, usize) -> Result<(f64, P)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if num_samples == 0 && cfg.epochs > 0 {
        return Err(argument("no training samples"));
    }
    let start = Instant::now();
    let mut opt = SgdMomentum::new(params, cfg.learning_rate, cfg.momentum)
        .with_l2(cfg.l2)
        .with_max_grad_norm(cfg.max_grad_norm);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let k = cfg.horizon_at(epoch);
        let order = Rng::substream(cfg.seed, streams::SHUFFLE + epoch as u64).permutation(num_samples);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_grads(params, batch, epoch, k)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    stage: "epoch",
                    index: epoch,
                });
            }
            total += loss * batch.len() as f64;
            opt.step(params, &grads).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence {
                    stage: "epoch",
                    index: epoch,
                },
                other => other,
            })?;
        }
        let seconds = if cfg.determinism {
            0.0
        } else {
            epoch_start.elapsed().as_secs_f64()
        };
        report.epochs.push(EpochRecord {
            epoch,
            k,
            loss: total / num_samples as f64,
            seconds,
        });
    }
    report.steps = opt.steps();
    report.seconds = if cfg.determinism {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    Ok(report)
}

/// Minimizes the symmetric reconstruction error on frame pairs (columns of
/// `x1`, `x2`), starting from `params`.
pub fn train_reconstruction(
    params: GaeParams,
    x1: &Matrix,
    x2: &Matrix,
    cfg: &TrainConfig,
) -> Result<(GaeParams, TrainReport)> {
    if x1.shape() != x2.shape() {
        return Err(Error::Shape {
            op: "train_reconstruction pairs",
            left: x1.shape(),
            right: x2.shape(),
        });
    }
    let mut params = params;
    let report = run_epochs(&mut params, x1.cols(), cfg, |p, idx, _, _| {
        let a = x1.select_columns(idx);
        let b = x2.select_columns(idx);
        gae::recon_loss_and_grads(p, &a, &b)
    })?;
    Ok((params, report))
}

/// Reconstructive pretraining of a fresh layer on frame pairs.
pub fn pretrain_gae(
    x1: &Matrix,
    x2: &Matrix,
    num_factors: usize,
    num_mappings: usize,
    cfg: &TrainConfig,
) -> Result<(GaeParams, TrainReport)> {
    let init = GaeParams::init(
        x1.rows(),
        num_factors,
        num_mappings,
        cfg.init_std,
        &mut Rng::substream(cfg.seed, streams::INIT),
    )?;
    train_reconstruction(init, x1, x2, cfg)
}

/// First-layer mapping pairs `(m(x0, x1), m(x1, x2))` used as layer-2 inputs.
pub fn layer2_training_pairs(
    layer1: &GaeParams,
    x0: &Matrix,
    x1: &Matrix,
    x2: &Matrix,
) -> Result<(Matrix, Matrix)> {
    Ok((
        gae::infer_mappings(layer1, x0, x1)?,
        gae::infer_mappings(layer1, x1, x2)?,
    ))
}

/// Reconstructive pretraining of the second layer on mapping pairs computed
/// by the frozen first layer.
pub fn pretrain_hgae_layer2(
    layer1: &GaeParams,
    x0: &Matrix,
    x1: &Matrix,
    x2: &Matrix,
    num_factors: usize,
    num_mappings: usize,
    cfg: &TrainConfig,
) -> Result<(GaeParams, TrainReport)> {
    let (a, b) = layer2_training_pairs(layer1, x0, x1, x2)?;
    pretrain_gae(&a, &b, num_factors, num_mappings, cfg)
}

/// Consecutive frame pairs `(x_t, x_{t+1})` for `t < len − 1`, over the first
/// `len` frames of every sequence.
pub fn consecutive_pairs(seqs: &SequenceSet, len: usize) -> Result<(Matrix, Matrix)> {
    let len = len.min(seqs.len());
    if len < 2 {
        return Err(argument("need at least two frames per sequence for pairs"));
    }
    let firsts: Vec<&Matrix> = (0..len - 1).map(|t| seqs.frame(t)).collect();
    let seconds: Vec<&Matrix> = (1..len).map(|t| seqs.frame(t)).collect();
    Ok((Matrix::hstack(&firsts)?, Matrix::hstack(&seconds)?))
}

/// Consecutive frame triples `(x_t, x_{t+1}, x_{t+2})` over the first `len`
/// frames of every sequence, the inputs of layer-2 pretraining.
pub fn consecutive_triples(seqs: &SequenceSet, len: usize) -> Result<(Matrix, Matrix, Matrix)> {
    let len = len.min(seqs.len());
    if len < 3 {
        return Err(argument("need at least three frames per sequence for triples"));
    }
    let stack = |offset: usize| -> Result<Matrix> {
        let frames: Vec<&Matrix> = (offset..len - 2 + offset).map(|t| seqs.frame(t)).collect();
        Matrix::hstack(&frames)
    };
    Ok((stack(0)?, stack(1)?, stack(2)?))
}

/// Predictive training: minimizes the k-step prediction error with gradients
/// through the full rollout, where k follows the horizon schedule.
pub fn predictive_finetune(
    model: Model,
    seqs: &SequenceSet,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let seed = model.seed_frames();
    let need = seed + cfg.max_horizon();
    if seqs.len() < need {
        return Err(argument(format!(
            "sequences of length {} are too short for {} seed frames plus horizon {}",
            seqs.len(),
            seed,
            cfg.max_horizon()
        )));
    }
    if seqs.dim() != model.frame_dim() {
        return Err(Error::Shape {
            op: "predictive_finetune frames",
            left: (seqs.dim(), seqs.num_sequences()),
            right: (model.frame_dim(), seqs.num_sequences()),
        });
    }
    let mut model = model;
    let mut window_rng_epoch = usize::MAX;
    let mut offsets: Vec<usize> = Vec::new();
    let report = run_epochs(&mut model, seqs.num_sequences(), cfg, |m, idx, epoch, k| {
        let len = seed + k;
        if cfg.random_windows && window_rng_epoch != epoch {
            let mut rng = Rng::substream(cfg.seed, streams::WINDOWS + epoch as u64);
            let span = seqs.len() - len + 1;
            offsets = (0..seqs.num_sequences()).map(|_| rng.below(span)).collect();
            window_rng_epoch = epoch;
        }
        let picks: Vec<(usize, usize)> = idx
            .iter()
            .map(|&i| (i, if cfg.random_windows { offsets[i] } else { 0 }))
            .collect();
        let frames = seqs.gather_windows(&picks, len)?;
        rollout_loss_and_grads(m, &frames, k)
    })?;
    Ok((model, report))
}
