//! Evaluation heads: mapping descriptors, softmax logistic regression and
//! rollout error against the persistence baseline.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::gae;
use crate::hgae::{self, Model};
use crate::math::{matmul, matmul_acc, Matrix};
use crate::params::ParamSet;
use crate::training::{run_epochs, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    /// first-layer mapping of frames 1 and 2
    M1First,
    /// first-layer mapping of frames 2 and 3
    M1Second,
    /// both first-layer mappings stacked
    M1Concat,
    /// second-layer mapping over frames 1–3
    M2,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 4] = [
        DescriptorKind::M1First,
        DescriptorKind::M1Second,
        DescriptorKind::M1Concat,
        DescriptorKind::M2,
    ];

    pub fn frames_needed(self) -> usize {
        match self {
            DescriptorKind::M1First => 2,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::M1First => "m1_first",
            DescriptorKind::M1Second => "m1_second",
            DescriptorKind::M1Concat => "m1_concat",
            DescriptorKind::M2 => "m2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| argument(format!("unknown descriptor kind '{s}'")))
    }
}

/// Descriptor columns for the sequences whose leading frames are `frames`.
pub fn extract_descriptor(model: &Model, frames: &[Matrix], kind: DescriptorKind) -> Result<Matrix> {
    if frames.len() < kind.frames_needed() {
        return Err(argument(format!(
            "descriptor {} needs {} frames, got {}",
            kind.name(),
            kind.frames_needed(),
            frames.len()
        )));
    }
    let l1 = model.layer1();
    match kind {
        DescriptorKind::M1First => gae::infer_mappings(l1, &frames[0], &frames[1]),
        DescriptorKind::M1Second => gae::infer_mappings(l1, &frames[1], &frames[2]),
        DescriptorKind::M1Concat => {
            let a = gae::infer_mappings(l1, &frames[0], &frames[1])?;
            let b = gae::infer_mappings(l1, &frames[1], &frames[2])?;
            Matrix::vstack(&[&a, &b])
        }
        DescriptorKind::M2 => match model {
            Model::Hgae(p) => Ok(hgae::infer_hierarchy(p, &frames[0], &frames[1], &frames[2])?.m2),
            Model::Gae(_) => Err(argument("m2 descriptor requires a two-layer model")),
        },
    }
}

/// Multinomial logistic regression: `softmax(weights · x + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// classes × dim
    pub weights: Matrix,
    /// classes × 1
    pub bias: Matrix,
}

impl Classifier {
    pub fn new(weights: Matrix, bias: Matrix) -> Result<Self> {
        if bias.shape() != (weights.rows(), 1) {
            return Err(Error::Shape {
                op: "Classifier bias",
                left: bias.shape(),
                right: (weights.rows(), 1),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(classes, dim),
            bias: Matrix::zeros(classes, 1),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = matmul(&self.weights, x, false, false)?;
        let cols = z.cols();
        let data = z.data_mut();
        for c in 0..self.classes() {
            let b = self.bias.get(c, 0);
            data[c * cols..(c + 1) * cols].iter_mut().for_each(|v| *v += b);
        }
        Ok(z)
    }

    /// Arg-max class per column; ties go to the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let z = self.scores(x)?;
        Ok((0..z.cols())
            .map(|j| {
                let mut best = 0;
                for c in 1..z.rows() {
                    if z.get(c, j) > z.get(best, j) {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

impl ParamSet for Classifier {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weights, &mut self.bias]
    }
}

fn check_labels(c: &Classifier, x: &Matrix, y: &[usize]) -> Result<()> {
    if x.cols() != y.len() || x.rows() != c.weights.cols() {
        return Err(Error::Shape {
            op: "classifier inputs",
            left: x.shape(),
            right: (c.weights.cols(), y.len()),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= c.classes()) {
        return Err(argument(format!("label {bad} out of range for {} classes", c.classes())));
    }
    Ok(())
}

/// Column-wise softmax probabilities and mean cross-entropy.
fn softmax_xent(z: &Matrix, y: &[usize]) -> (Matrix, f64) {
    let (classes, n) = z.shape();
    let mut probs = Matrix::zeros(classes, n);
    let mut loss = 0.0;
    for j in 0..n {
        let max = (0..classes).map(|c| z.get(c, j)).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..classes).map(|c| (z.get(c, j) - max).exp()).sum();
        for c in 0..classes {
            probs.set(c, j, (z.get(c, j) - max).exp() / sum);
        }
        loss += sum.ln() + max - z.get(y[j], j);
    }
    (probs, loss / n.max(1) as f64)
}

/// Mean cross-entropy plus `l2/2 · ‖weights‖²`.
pub fn logreg_loss(c: &Classifier, x: &Matrix, y: &[usize], l2: f64) -> Result<f64> {
    check_labels(c, x, y)?;
    let (_, loss) = softmax_xent(&c.scores(x)?, y);
    Ok(loss + 0.5 * l2 * c.weights.sum_squares())
}

pub fn logreg_loss_and_grads(c: &Classifier, x: &Matrix, y: &[usize], l2: f64) -> Result<(f64, Classifier)> {
    check_labels(c, x, y)?;
    let (mut d_z, loss) = softmax_xent(&c.scores(x)?, y);
    let n = y.len().max(1) as f64;
    for (j, &label) in y.iter().enumerate() {
        let v = d_z.get(label, j);
        d_z.set(label, j, v - 1.0);
    }
    d_z.scale_in_place(1.0 / n);
    let mut g = c.zeros_like();
    matmul_acc(&mut g.weights, 1.0, &d_z, false, x, true)?;
    g.weights.add_scaled(&c.weights, l2)?;
    for k in 0..c.classes() {
        let s: f64 = (0..d_z.cols()).map(|j| d_z.get(k, j)).sum();
        g.bias.set(k, 0, s);
    }
    Ok((loss + 0.5 * l2 * c.weights.sum_squares(), g))
}

/// Trains from a zero initialization with the shared SGD+momentum loop.
/// The regularization strength is `cfg.l2`.
pub fn train_logreg(x: &Matrix, y: &[usize], classes: usize, cfg: &TrainConfig) -> Result<Classifier> {
    let mut c = Classifier::zeros(classes, x.rows());
    check_labels(&c, x, y)?;
    // weight decay lives in the loss here, not in the optimizer
    let opt_cfg = TrainConfig { l2: 0.0, ..cfg.clone() };
    run_epochs(&mut c, y.len(), &opt_cfg, |c, idx, _, _| {
        let xb = x.select_columns(idx);
        let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        logreg_loss_and_grads(c, &xb, &yb, cfg.l2)
    })?;
    Ok(c)
}

pub fn accuracy(c: &Classifier, x: &Matrix, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(argument("accuracy of an empty set is undefined"));
    }
    check_labels(c, x, y)?;
    let pred = c.predict(x)?;
    let correct = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / y.len() as f64)
}

/// Default classifier settings.
pub fn default_logreg_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        epochs: 200,
        batch_size: 100,
        l2: 1e-4,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub per_step: Vec<f64>,
    pub mean: f64,
    pub baseline_per_step: Vec<f64>,
    pub baseline_mean: f64,
}

/// Per-step mean squared error of a rollout, and of the persistence
/// predictor that repeats `last_seed` at every step.
pub fn rollout_mse(pred: &[Matrix], truth: &[Matrix], last_seed: &Matrix) -> Result<RolloutMetrics> {
    if pred.len() != truth.len() {
        return Err(argument(format!(
            "prediction has {} steps, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let mse = |a: &Matrix, b: &Matrix| -> Result<f64> {
        let n = a.data().len().max(1) as f64;
        Ok(a.sub(b)?.sum_squares() / n)
    };
    let per_step = pred.iter().zip(truth).map(|(p, t)| mse(p, t)).collect::<Result<Vec<_>>>()?;
    let baseline_per_step = truth.iter().map(|t| mse(last_seed, t)).collect::<Result<Vec<_>>>()?;
    let mean_of = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(RolloutMetrics {
        mean: mean_of(&per_step),
        baseline_mean: mean_of(&baseline_per_step),
        per_step,
        baseline_per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gae::GaeParams;
    use crate::hgae::HgaeParams;
    use crate::math::sample_gaussian;
    use crate::rng::Rng;
    use crate::training::{finite_difference_grads, max_relative_error};

    #[test]
    fn descriptor_shapes_and_delegation() {
        let p = HgaeParams::init(5, [4, 4], [3, 2], 0.5, &mut Rng::new(1)).unwrap();
        let model = Model::Hgae(p.clone());
        let mut rng = Rng::new(2);
        let xs: Vec<Matrix> = (0..3).map(|_| sample_gaussian(&mut rng, 5, 4, 1.0).unwrap()).collect();
        let concat = extract_descriptor(&model, &xs, DescriptorKind::M1Concat).unwrap();
        assert_eq!(concat.rows(), 6);
        assert_eq!(
            extract_descriptor(&model, &xs, DescriptorKind::M1First).unwrap(),
            gae::infer_mappings(&p.layer1, &xs[0], &xs[1]).unwrap()
        );
        assert_eq!(extract_descriptor(&model, &xs, DescriptorKind::M2).unwrap().rows(), 2);
        assert!(extract_descriptor(&model, &xs[..2], DescriptorKind::M2).is_err());

        let same = vec![xs[0].clone(), xs[0].clone(), xs[0].clone()];
        assert_eq!(
            extract_descriptor(&model, &same, DescriptorKind::M1First).unwrap(),
            extract_descriptor(&model, &same, DescriptorKind::M1Second).unwrap()
        );

        let gae_model = Model::Gae(p.layer1);
        assert!(matches!(
            extract_descriptor(&gae_model, &xs, DescriptorKind::M2),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DescriptorKind::ALL {
            assert_eq!(DescriptorKind::parse(k.name()).unwrap(), k);
        }
        assert!(DescriptorKind::parse("m3").is_err());
    }

    #[test]
    fn separable_points() {
        let x = Matrix::from_vec(1, 2, vec![-1.0, 1.0]).unwrap();
        let y = [0, 1];
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 2,
            learning_rate: 0.5,
            ..default_logreg_config(0)
        };
        let c = train_logreg(&x, &y, 2, &cfg).unwrap();
        assert_eq!(accuracy(&c, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let x = sample_gaussian(&mut rng, 4, 7, 1.0).unwrap();
        let y: Vec<usize> = (0..7).map(|_| rng.below(3)).collect();
        let c = Classifier::new(
            sample_gaussian(&mut rng, 3, 4, 0.5).unwrap(),
            sample_gaussian(&mut rng, 3, 1, 0.5).unwrap(),
        )
        .unwrap();
        let (_, g) = logreg_loss_and_grads(&c, &x, &y, 1e-3).unwrap();
        let fd = finite_difference_grads(|q: &Classifier| logreg_loss(q, &x, &y, 1e-3), &c, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) < 1e-6);
    }

    #[test]
    fn training_does_not_increase_loss() {
        let mut rng = Rng::new(4);
        let x = sample_gaussian(&mut rng, 3, 40, 1.0).unwrap();
        let y: Vec<usize> = (0..40).map(|j| usize::from(x.get(0, j) > 0.0)).collect();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            ..default_logreg_config(1)
        };
        let init = logreg_loss(&Classifier::zeros(2, 3), &x, &y, cfg.l2).unwrap();
        let c = train_logreg(&x, &y, 2, &cfg).unwrap();
        assert!(logreg_loss(&c, &x, &y, cfg.l2).unwrap() <= init);
    }

    #[test]
    fn accuracy_cases() {
        let c = Classifier::new(Matrix::identity(2), Matrix::zeros(2, 1)).unwrap();
        let x = Matrix::from_vec(2, 4, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(accuracy(&c, &x, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&c, &x, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&c, &Matrix::zeros(2, 0), &[]).is_err());
        // tie goes to class 0
        assert_eq!(c.predict(&Matrix::zeros(2, 1)).unwrap(), vec![0]);
        assert!(accuracy(&c, &x, &[0, 1]).is_err());
    }

    #[test]
    fn rollout_mse_cases() {
        let t = vec![Matrix::column_vector(&[0.0, 1.0])];
        let p = vec![Matrix::column_vector(&[1.0, 1.0])];
        let m = rollout_mse(&p, &t, &t[0]).unwrap();
        assert_eq!(m.per_step, vec![0.5]);
        assert_eq!(m.baseline_per_step, vec![0.0]);
        let same = rollout_mse(&t, &t, &t[0]).unwrap();
        assert_eq!(same.mean, 0.0);
        assert!(rollout_mse(&p, &[], &t[0]).is_err());
    }

    #[test]
    fn gae_model_descriptors_need_two_frames() {
        let p = GaeParams::init(3, 3, 2, 0.5, &mut Rng::new(5)).unwrap();
        let xs = vec![Matrix::zeros(3, 1); 2];
        assert!(extract_descriptor(&Model::Gae(p.clone()), &xs, DescriptorKind::M1First).is_ok());
        assert!(extract_descriptor(&Model::Gae(p), &xs, DescriptorKind::M1Second).is_err());
    }
}
