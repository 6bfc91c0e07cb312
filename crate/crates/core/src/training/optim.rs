use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::params::ParamSet;

/// One momentum step on a single tensor: `v ← μ·v − lr·g; θ ← θ + v`.
pub fn sgd_momentum_step(
    param: &mut Matrix,
    grad: &Matrix,
    velocity: &mut Matrix,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::Shape {
            op: "sgd_momentum_step",
            left: param.shape(),
            right: grad.shape(),
        });
    }
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// SGD with momentum over a whole parameter set.
#[derive(Clone, Debug)]
pub struct SgdMomentum<P: ParamSet> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub max_grad_norm: Option<f64>,
    velocity: P,
    steps: usize,
}

impl<P: ParamSet> SgdMomentum<P> {
    pub fn new(params: &P, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            l2: 0.0,
            max_grad_norm: None,
            velocity: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn with_max_grad_norm(mut self, norm: Option<f64>) -> Self {
        self.max_grad_norm = norm;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut grads = grads.clone();
        if self.l2 > 0.0 {
            for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
                g.add_scaled(p, self.l2)?;
            }
        }
        if let Some(max) = self.max_grad_norm {
            let norm = grads.sum_squares().sqrt();
            if norm > max && norm > 0.0 {
                for g in grads.tensors_mut() {
                    g.scale_in_place(max / norm);
                }
            }
        }
        for ((p, g), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            sgd_momentum_step(p, g, v, self.learning_rate, self.momentum)?;
        }
        self.steps += 1;
        if !params.is_finite() {
            return Err(Error::Divergence {
                stage: "optimizer step",
                index: self.steps,
            });
        }
        Ok(())
    }
}
