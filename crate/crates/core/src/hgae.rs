//! Two-layer higher-order gated autoencoder and multi-step rollout.
//!
//! The first layer relates adjacent frames, the second relates adjacent
//! first-layer mappings. Prediction runs top-down: the second-order mapping
//! predicts the next first-order mapping, which then transforms the newest
//! frame.

use crate::error::{argument, Error, Result};
use crate::gae::{self, Direction, GaeParams};
use crate::math::Matrix;
use crate::params::ParamSet;
use crate::rng::Rng;

/// Frames whose magnitude exceeds this are treated as a diverged rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct HgaeParams {
    /// relates frames
    pub layer1: GaeParams,
    /// relates first-layer mappings
    pub layer2: GaeParams,
}

impl HgaeParams {
    pub fn new(layer1: GaeParams, layer2: GaeParams) -> Result<Self> {
        if layer2.dim_in() != layer1.num_mappings() {
            return Err(Error::Shape {
                op: "HgaeParams layer2 input",
                left: layer2.u.shape(),
                right: (layer2.num_factors(), layer1.num_mappings()),
            });
        }
        Ok(Self { layer1, layer2 })
    }

    pub fn init(
        dim_in: usize,
        factors: [usize; 2],
        mappings: [usize; 2],
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let layer1 = GaeParams::init(dim_in, factors[0], mappings[0], std, rng)?;
        let layer2 = GaeParams::init(mappings[0], factors[1], mappings[1], std, rng)?;
        Self::new(layer1, layer2)
    }
}

impl ParamSet for HgaeParams {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.layer1.tensors();
        t.extend(self.layer2.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.layer1.tensors_mut();
        t.extend(self.layer2.tensors_mut());
        t
    }
}

/// First- and second-order mappings inferred from three frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    /// mapping of `(x0, x1)`
    pub m1_first: Matrix,
    /// mapping of `(x1, x2)`
    pub m1_second: Matrix,
    /// mapping of `(m1_first, m1_second)`
    pub m2: Matrix,
}

pub fn infer_hierarchy(p: &HgaeParams, x0: &Matrix, x1: &Matrix, x2: &Matrix) -> Result<Hierarchy> {
    let m1_first = gae::infer_mappings(&p.layer1, x0, x1)?;
    let m1_second = gae::infer_mappings(&p.layer1, x1, x2)?;
    let m2 = gae::infer_mappings(&p.layer2, &m1_first, &m1_second)?;
    Ok(Hierarchy {
        m1_first,
        m1_second,
        m2,
    })
}

/// Predicts the next first-order mapping. The output is linear and is not
/// squashed, so entries may leave `(0, 1)`.
pub fn predict_mapping(p: &HgaeParams, m1_prev: &Matrix, m2: &Matrix) -> Result<Matrix> {
    gae::transform(&p.layer2, Direction::Forward, m1_prev, m2)
}

pub fn predict_frame(p: &HgaeParams, x_curr: &Matrix, m1_pred: &Matrix) -> Result<Matrix> {
    gae::transform(&p.layer1, Direction::Forward, x_curr, m1_pred)
}

/// Either model depth, for the code paths that treat them uniformly.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Gae(GaeParams),
    Hgae(HgaeParams),
}

impl Model {
    /// Ground-truth frames needed before the first prediction.
    pub fn seed_frames(&self) -> usize {
        match self {
            Model::Gae(_) => 2,
            Model::Hgae(_) => 3,
        }
    }

    pub fn frame_dim(&self) -> usize {
        match self {
            Model::Gae(p) => p.dim_in(),
            Model::Hgae(p) => p.layer1.dim_in(),
        }
    }

    pub fn layer1(&self) -> &GaeParams {
        match self {
            Model::Gae(p) => p,
            Model::Hgae(p) => &p.layer1,
        }
    }

    /// Predicts the frame following `window`, which must hold exactly
    /// `seed_frames()` frames ending in the newest one.
    pub fn predict_next(&self, window: &[&Matrix]) -> Result<Matrix> {
        if window.len() != self.seed_frames() {
            return Err(argument(format!(
                "prediction window needs {} frames, got {}",
                self.seed_frames(),
                window.len()
            )));
        }
        match self {
            Model::Gae(p) => gae::predict_step(p, window[0], window[1]),
            Model::Hgae(p) => {
                let h = infer_hierarchy(p, window[0], window[1], window[2])?;
                let m1_next = predict_mapping(p, &h.m1_second, &h.m2)?;
                predict_frame(p, window[2], &m1_next)
            }
        }
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<&Matrix> {
        match self {
            Model::Gae(p) => p.tensors(),
            Model::Hgae(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Model::Gae(p) => p.tensors_mut(),
            Model::Hgae(p) => p.tensors_mut(),
        }
    }
}

/// Runs the inference-prediction loop for `steps` frames.
///
/// Each prediction is appended to the sequence and the next window is taken
/// from the extended sequence, so from the second step on mappings are
/// re-inferred on predicted frames. Every seed is a `dim × batch` matrix.
pub fn rollout(model: &Model, seeds: &[Matrix], steps: usize) -> Result<Vec<Matrix>> {
    let need = model.seed_frames();
    if seeds.len() != need {
        return Err(argument(format!(
            "rollout needs {need} seed frames, got {}",
            seeds.len()
        )));
    }
    let mut frames: Vec<Matrix> = seeds.to_vec();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let window: Vec<&Matrix> = frames[frames.len() - need..].iter().collect();
        let next = model.predict_next(&window)?;
        if !next.is_finite() || next.max_abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                stage: "rollout step",
                index: step,
            });
        }
        out.push(next.clone());
        frames.push(next);
    }
    Ok(out)
}
