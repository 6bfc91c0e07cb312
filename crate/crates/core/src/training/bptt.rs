//! k-step prediction loss and its gradient through the unrolled rollout.
//!
//! The forward pass appends each prediction to the sequence and re-infers
//! mappings on windows that contain predicted frames; the backward pass walks
//! the same operations in reverse, so gradients reach earlier steps through
//! every predicted frame.

use crate::error::{argument, Result};
use crate::gae::{self, Direction, GaeParams, MappingInference, TransformCache};
use crate::hgae::{HgaeParams, Model};
use crate::math::Matrix;
use crate::params::ParamSet;

fn check_frames(model: &Model, frames: &[Matrix], k: usize) -> Result<()> {
    let need = model.seed_frames() + k;
    if k == 0 {
        return Err(argument("prediction horizon must be at least 1"));
    }
    if frames.len() < need {
        return Err(argument(format!(
            "{k}-step prediction needs {need} frames, got {}",
            frames.len()
        )));
    }
    Ok(())
}

/// Sum over `k` steps of squared prediction error, averaged over columns.
pub fn rollout_loss(model: &Model, frames: &[Matrix], k: usize) -> Result<f64> {
    check_frames(model, frames, k)?;
    let seed = model.seed_frames();
    let mut ext: Vec<Matrix> = frames[..seed].to_vec();
    let mut loss = 0.0;
    for i in 0..k {
        let window: Vec<&Matrix> = ext[ext.len() - seed..].iter().collect();
        let pred = model.predict_next(&window)?;
        loss += pred.sub(&frames[seed + i])?.sum_squares();
        ext.push(pred);
    }
    Ok(loss / frames[0].cols().max(1) as f64)
}

/// Loss of [`rollout_loss`] plus exact gradients with respect to all
/// parameters of the model.
pub fn rollout_loss_and_grads(model: &Model, frames: &[Matrix], k: usize) -> Result<(f64, Model)> {
    check_frames(model, frames, k)?;
    match model {
        Model::Gae(p) => {
            let (loss, g) = gae_bptt(p, frames, k)?;
            Ok((loss, Model::Gae(g)))
        }
        Model::Hgae(p) => {
            let (loss, g) = hgae_bptt(p, frames, k)?;
            Ok((loss, Model::Hgae(g)))
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(acc) => acc.add_scaled(&g, 1.0),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

struct PairNode {
    left: usize,
    inf: MappingInference,
}

fn gae_bptt(p: &GaeParams, frames: &[Matrix], k: usize) -> Result<(f64, GaeParams)> {
    const SEED: usize = 2;
    let batch = frames[0].cols().max(1) as f64;
    let mut ext: Vec<Matrix> = frames[..SEED].to_vec();
    let mut pairs = Vec::with_capacity(k);
    let mut transforms: Vec<TransformCache> = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    let mut loss = 0.0;
    for i in 0..k {
        let inf = gae::infer_mappings_full(p, &ext[i], &ext[i + 1])?;
        let (pred, cache) = gae::transform_full(p, Direction::Forward, &ext[i + 1], &inf.mappings)?;
        let r = pred.sub(&frames[SEED + i])?;
        loss += r.sum_squares();
        residuals.push(r);
        pairs.push(PairNode { left: i, inf });
        transforms.push(cache);
        ext.push(pred);
    }

    let mut grads = p.zeros_like();
    let mut d_ext: Vec<Option<Matrix>> = vec![None; ext.len()];
    let scale = 2.0 / batch;
    for i in (0..k).rev() {
        let mut d_pred = residuals[i].scale(scale);
        if let Some(d) = d_ext[SEED + i].take() {
            d_pred.add_scaled(&d, 1.0)?;
        }
        let curr = i + 1;
        let pair = &pairs[i];
        let (d_curr, d_m) = gae::transform_backward(
            p,
            Direction::Forward,
            &ext[curr],
            &pair.inf.mappings,
            &transforms[i],
            &d_pred,
            &mut grads,
            curr >= SEED,
        )?;
        if let Some(d) = d_curr {
            accumulate(&mut d_ext[curr], d)?;
        }
        let left = pair.left;
        let needs_inputs = left + 1 >= SEED;
        if let Some((d_left, d_right)) = gae::infer_backward(
            p,
            &ext[left],
            &ext[left + 1],
            &pair.inf,
            &d_m,
            &mut grads,
            needs_inputs,
        )? {
            if left >= SEED {
                accumulate(&mut d_ext[left], d_left)?;
            }
            accumulate(&mut d_ext[left + 1], d_right)?;
        }
    }
    Ok((loss / batch, grads))
}

struct HgaeStep {
    top: MappingInference,
    predicted_mapping: Matrix,
    mapping_cache: TransformCache,
    frame_cache: TransformCache,
}

fn hgae_bptt(p: &HgaeParams, frames: &[Matrix], k: usize) -> Result<(f64, HgaeParams)> {
    const SEED: usize = 3;
    let batch = frames[0].cols().max(1) as f64;
    let mut ext: Vec<Matrix> = frames[..SEED].to_vec();
    // pairs[j] relates ext[j] and ext[j + 1]
    let mut pairs: Vec<MappingInference> = vec![
        gae::infer_mappings_full(&p.layer1, &ext[0], &ext[1])?,
        gae::infer_mappings_full(&p.layer1, &ext[1], &ext[2])?,
    ];
    let mut steps: Vec<HgaeStep> = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    let mut loss = 0.0;
    for i in 0..k {
        if i > 0 {
            pairs.push(gae::infer_mappings_full(&p.layer1, &ext[i + 1], &ext[i + 2])?);
        }
        let top = gae::infer_mappings_full(&p.layer2, &pairs[i].mappings, &pairs[i + 1].mappings)?;
        let (predicted_mapping, mapping_cache) =
            gae::transform_full(&p.layer2, Direction::Forward, &pairs[i + 1].mappings, &top.mappings)?;
        let (pred, frame_cache) =
            gae::transform_full(&p.layer1, Direction::Forward, &ext[i + 2], &predicted_mapping)?;
        let r = pred.sub(&frames[SEED + i])?;
        loss += r.sum_squares();
        residuals.push(r);
        steps.push(HgaeStep {
            top,
            predicted_mapping,
            mapping_cache,
            frame_cache,
        });
        ext.push(pred);
    }

    let mut grads = p.zeros_like();
    let mut d_ext: Vec<Option<Matrix>> = vec![None; ext.len()];
    let mut d_pairs: Vec<Option<Matrix>> = vec![None; pairs.len()];
    let scale = 2.0 / batch;

    let pair_backward = |j: usize,
                         d_pairs: &mut Vec<Option<Matrix>>,
                         d_ext: &mut Vec<Option<Matrix>>,
                         grads: &mut HgaeParams|
     -> Result<()> {
        let Some(d_m) = d_pairs[j].take() else {
            return Ok(());
        };
        let needs_inputs = j + 1 >= SEED;
        if let Some((d_left, d_right)) = gae::infer_backward(
            &p.layer1,
            &ext[j],
            &ext[j + 1],
            &pairs[j],
            &d_m,
            &mut grads.layer1,
            needs_inputs,
        )? {
            if j >= SEED {
                accumulate(&mut d_ext[j], d_left)?;
            }
            accumulate(&mut d_ext[j + 1], d_right)?;
        }
        Ok(())
    };

    for i in (0..k).rev() {
        let step = &steps[i];
        let mut d_pred = residuals[i].scale(scale);
        if let Some(d) = d_ext[SEED + i].take() {
            d_pred.add_scaled(&d, 1.0)?;
        }
        let curr = i + 2;
        let (d_curr, d_mapping) = gae::transform_backward(
            &p.layer1,
            Direction::Forward,
            &ext[curr],
            &step.predicted_mapping,
            &step.frame_cache,
            &d_pred,
            &mut grads.layer1,
            curr >= SEED,
        )?;
        if let Some(d) = d_curr {
            accumulate(&mut d_ext[curr], d)?;
        }
        let (d_prev_map, d_top) = gae::transform_backward(
            &p.layer2,
            Direction::Forward,
            &pairs[i + 1].mappings,
            &step.top.mappings,
            &step.mapping_cache,
            &d_mapping,
            &mut grads.layer2,
            true,
        )?;
        if let Some(d) = d_prev_map {
            accumulate(&mut d_pairs[i + 1], d)?;
        }
        if let Some((d_a, d_b)) = gae::infer_backward(
            &p.layer2,
            &pairs[i].mappings,
            &pairs[i + 1].mappings,
            &step.top,
            &d_top,
            &mut grads.layer2,
            true,
        )? {
            accumulate(&mut d_pairs[i], d_a)?;
            accumulate(&mut d_pairs[i + 1], d_b)?;
        }
        // pairs[i + 1] has no consumers left once step i is done
        pair_backward(i + 1, &mut d_pairs, &mut d_ext, &mut grads)?;
    }
    pair_backward(0, &mut d_pairs, &mut d_ext, &mut grads)?;
    Ok((loss / batch, grads))
}
