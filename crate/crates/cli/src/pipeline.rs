//! Experiment stages shared by the subcommands and the acceptance suite.

use anyhow::{ensure, Result};
use relseq::eval::{self, DescriptorKind, RolloutMetrics};
use relseq::hgae::rollout;
use relseq::preprocess::{fit_whitening, WhiteningTransform};
use relseq::training::{self, consecutive_pairs, consecutive_triples, streams};
use relseq::{GaeParams, HgaeParams, Matrix, Model, Rng, SequenceSet, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};

pub fn whiten(ds: &Dataset, split: Split, fraction: f64, eps: f64) -> Result<WhiteningTransform> {
    Ok(fit_whitening(&ds.pixel_matrix(split)?, fraction, eps)?)
}

/// Reconstructive training of a first layer on consecutive pairs from the
/// first `frames_used` frames.
pub fn pretrain_layer1(
    set: &SequenceSet,
    frames_used: usize,
    factors: usize,
    mappings: usize,
    cfg: &TrainConfig,
) -> Result<(GaeParams, TrainReport)> {
    let (x1, x2) = consecutive_pairs(set, frames_used)?;
    Ok(training::pretrain_gae(&x1, &x2, factors, mappings, cfg)?)
}

/// Reconstructive training of a second layer on mapping pairs of
/// consecutive triples, with the first layer frozen.
pub fn pretrain_layer2(
    layer1: &GaeParams,
    set: &SequenceSet,
    frames_used: usize,
    factors: usize,
    mappings: usize,
    cfg: &TrainConfig,
) -> Result<(HgaeParams, TrainReport)> {
    let (x0, x1, x2) = consecutive_triples(set, frames_used)?;
    let (layer2, report) = training::pretrain_hgae_layer2(layer1, &x0, &x1, &x2, factors, mappings, cfg)?;
    Ok((HgaeParams::new(layer1.clone(), layer2)?, report))
}

/// Fresh model for predictive training without pretraining.
pub fn init_model(hierarchical: bool, dim: usize, factors: [usize; 2], mappings: [usize; 2], cfg: &TrainConfig) -> Result<Model> {
    let mut rng = Rng::substream(cfg.seed, streams::INIT);
    Ok(if hierarchical {
        Model::Hgae(HgaeParams::init(dim, factors, mappings, cfg.init_std, &mut rng)?)
    } else {
        Model::Gae(GaeParams::init(dim, factors[0], mappings[0], cfg.init_std, &mut rng)?)
    })
}

pub fn finetune(model: Model, set: &SequenceSet, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    Ok(training::predictive_finetune(model, set, cfg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMetrics {
    pub descriptor_kind: String,
    pub train_acc: f64,
    pub valid_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

/// Trains a classifier per descriptor kind on the training split and scores
/// every non-empty split. `shuffle_seed` permutes the training labels, which
/// gives the chance-level control.
pub fn evaluate_descriptors(
    model: &Model,
    ds: &Dataset,
    whitening: &WhiteningTransform,
    kinds: &[DescriptorKind],
    logreg: &TrainConfig,
    shuffle_seed: Option<u64>,
) -> Result<Vec<DescriptorMetrics>> {
    let mut y_train = ds.labels(Split::Train)?;
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut y_train);
    }
    let need = kinds.iter().map(|k| k.frames_needed()).max().unwrap_or(2);
    let sets: Vec<Option<SequenceSet>> = Split::ALL
        .iter()
        .map(|&s| {
            if ds.indices(s).is_empty() {
                Ok(None)
            } else {
                ds.sequence_set(s, need, Some(whitening)).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let train = sets[0].as_ref().expect("training split checked by labels()");
    kinds
        .iter()
        .map(|&kind| {
            let x = eval::extract_descriptor(model, train.frames(), kind)?;
            let classes = relseq::datagen::NUM_CLASSES;
            let clf = eval::train_logreg(&x, &y_train, classes, logreg)?;
            let score = |split: Split| -> Result<Option<f64>> {
                match &sets[split as usize] {
                    None => Ok(None),
                    Some(set) => {
                        let x = eval::extract_descriptor(model, set.frames(), kind)?;
                        Ok(Some(eval::accuracy(&clf, &x, &ds.labels(split)?)?))
                    }
                }
            };
            Ok(DescriptorMetrics {
                descriptor_kind: kind.name().to_string(),
                train_acc: eval::accuracy(&clf, &x, &y_train)?,
                valid_acc: score(Split::Valid)?,
                test_acc: score(Split::Test)?,
            })
        })
        .collect()
}

/// Rolls out `steps` frames from the leading seed frames of every sequence
/// (columns of `set`). Metrics are returned when ground truth covers the
/// predicted steps.
pub fn rollout_set(model: &Model, set: &SequenceSet, steps: usize) -> Result<(Vec<Matrix>, Option<RolloutMetrics>)> {
    let seeds = model.seed_frames();
    ensure!(set.len() >= seeds, "need {seeds} seed frames, data has {}", set.len());
    let seed_frames = set.frames()[..seeds].to_vec();
    let predicted = rollout(model, &seed_frames, steps)?;
    let metrics = if set.len() >= seeds + steps {
        Some(eval::rollout_mse(&predicted, &set.frames()[seeds..seeds + steps], &seed_frames[seeds - 1])?)
    } else {
        None
    };
    Ok((predicted, metrics))
}
