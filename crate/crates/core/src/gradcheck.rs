//! Finite-difference suites for every analytic gradient path.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval;
use crate::gae::{self, GaeParams};
use crate::hgae::{HgaeParams, Model};
use crate::math::{sample_gaussian, Matrix};
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::training::{finite_difference_grads, max_relative_error, rollout_loss, rollout_loss_and_grads};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: negates the analytic gradient before comparison.
    pub flip_sign: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 10,
            seed: 0,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            flip_sign: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
struct TinyDims {
    frame: usize,
    factors: [usize; 2],
    mappings: [usize; 2],
    batch: usize,
}

fn tiny_dims(rng: &mut Rng) -> TinyDims {
    TinyDims {
        frame: 4 + rng.below(5),
        factors: [3 + rng.below(4), 3 + rng.below(4)],
        mappings: [2 + rng.below(3), 2 + rng.below(3)],
        batch: 2 + rng.below(3),
    }
}

fn frames(rng: &mut Rng, d: TinyDims, count: usize) -> Result<Vec<Matrix>> {
    (0..count).map(|_| sample_gaussian(rng, d.frame, d.batch, 1.0)).collect()
}

fn compare<P: ParamSet>(analytic: P, numeric: &P, flip: bool) -> f64 {
    let mut analytic = analytic;
    if flip {
        for t in analytic.tensors_mut() {
            t.scale_in_place(-1.0);
        }
    }
    max_relative_error(&analytic, numeric)
}

/// Runs every suite and reports the worst relative error of each.
pub fn run_suites(opts: &GradcheckOptions) -> Result<Vec<SuiteResult>> {
    let mut results = Vec::new();
    let mut push = |name: String, errors: Vec<f64>| {
        let max = errors.iter().copied().fold(0.0, f64::max);
        results.push(SuiteResult {
            name,
            instances: errors.len(),
            max_rel_error: max,
            passed: max < opts.tolerance,
        });
    };

    let mut errs = Vec::new();
    for i in 0..opts.instances {
        let mut rng = Rng::substream(opts.seed, 100 + i as u64);
        let d = tiny_dims(&mut rng);
        let p = GaeParams::init(d.frame, d.factors[0], d.mappings[0], 0.4, &mut rng)?;
        let xs = frames(&mut rng, d, 2)?;
        let (_, g) = gae::recon_loss_and_grads(&p, &xs[0], &xs[1])?;
        let fd = finite_difference_grads(|q: &GaeParams| gae::recon_loss(q, &xs[0], &xs[1]), &p, opts.step)?;
        errs.push(compare(g, &fd, opts.flip_sign));
    }
    push("gae reconstruction".into(), errs);

    for (depth, name) in [(1usize, "gae"), (2, "hgae")] {
        for k in 1..=3usize {
            let mut errs = Vec::new();
            for i in 0..opts.instances {
                let mut rng = Rng::substream(opts.seed, 1000 * depth as u64 + 10 * k as u64 + i as u64 * 7919);
                let d = tiny_dims(&mut rng);
                let model = if depth == 1 {
                    Model::Gae(GaeParams::init(d.frame, d.factors[0], d.mappings[0], 0.4, &mut rng)?)
                } else {
                    Model::Hgae(HgaeParams::init(d.frame, d.factors, d.mappings, 0.4, &mut rng)?)
                };
                let xs = frames(&mut rng, d, model.seed_frames() + k)?;
                let (_, g) = rollout_loss_and_grads(&model, &xs, k)?;
                let fd = finite_difference_grads(|m: &Model| rollout_loss(m, &xs, k), &model, opts.step)?;
                errs.push(compare(g, &fd, opts.flip_sign));
            }
            let label = if depth == 1 && k == 1 {
                "gae single-step prediction".to_string()
            } else {
                format!("{name} {k}-step prediction (bptt)")
            };
            push(label, errs);
        }
    }

    let mut errs = Vec::new();
    for i in 0..opts.instances {
        let mut rng = Rng::substream(opts.seed, 50_000 + i as u64);
        let dim = 3 + rng.below(4);
        let classes = 2 + rng.below(4);
        let n = 6;
        let x = sample_gaussian(&mut rng, dim, n, 1.0)?;
        let y: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let c = eval::Classifier::new(
            sample_gaussian(&mut rng, classes, dim, 0.5)?,
            sample_gaussian(&mut rng, classes, 1, 0.5)?,
        )?;
        let l2 = 1e-2;
        let (_, g) = eval::logreg_loss_and_grads(&c, &x, &y, l2)?;
        let fd = finite_difference_grads(|q: &eval::Classifier| eval::logreg_loss(q, &x, &y, l2), &c, opts.step)?;
        errs.push(compare(g, &fd, opts.flip_sign));
    }
    push("logistic regression".into(), errs);

    Ok(results)
}
