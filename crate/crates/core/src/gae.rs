//! Single-layer gated autoencoder.
//!
//! Mapping units pool over products of filter responses of two inputs,
//! `m = σ(W((U x) ⊙ (V y)))`, and a transformation encoded in `m` is applied
//! to a frame with `Vᵀ((U x) ⊙ (Wᵀ m))`. All functions accept batches as
//! matrix columns; a single frame is a one-column matrix.

use crate::error::{Error, Result};
use crate::math::{matmul, matmul_acc, sample_gaussian, sigmoid, Matrix};
use crate::params::ParamSet;
use crate::rng::Rng;

/// Filter matrices of one bilinear layer.
///
/// `u`, `v` are `num_factors × dim_in`; `w` is `num_mappings × num_factors`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaeParams {
    pub u: Matrix,
    pub v: Matrix,
    pub w: Matrix,
}

impl GaeParams {
    pub fn new(u: Matrix, v: Matrix, w: Matrix) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::Shape {
                op: "GaeParams U/V",
                left: u.shape(),
                right: v.shape(),
            });
        }
        if w.cols() != u.rows() {
            return Err(Error::Shape {
                op: "GaeParams W",
                left: w.shape(),
                right: u.shape(),
            });
        }
        let p = Self { u, v, w };
        if !p.is_finite() {
            return Err(Error::Argument("parameters must be finite".into()));
        }
        Ok(p)
    }

    /// Small Gaussian initialization for all three matrices.
    pub fn init(
        dim_in: usize,
        num_factors: usize,
        num_mappings: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let u = sample_gaussian(rng, num_factors, dim_in, std)?;
        let v = sample_gaussian(rng, num_factors, dim_in, std)?;
        let w = sample_gaussian(rng, num_mappings, num_factors, std)?;
        Ok(Self { u, v, w })
    }

    pub fn dim_in(&self) -> usize {
        self.u.cols()
    }

    pub fn num_factors(&self) -> usize {
        self.u.rows()
    }

    pub fn num_mappings(&self) -> usize {
        self.w.rows()
    }

    /// Same layer with the roles of `U` and `V` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            u: self.v.clone(),
            v: self.u.clone(),
            w: self.w.clone(),
        }
    }

    fn check_input(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.rows() != self.dim_in() {
            return Err(Error::Shape {
                op,
                left: x.shape(),
                right: (self.dim_in(), x.cols()),
            });
        }
        Ok(())
    }

    fn check_mappings(&self, m: &Matrix, op: &'static str) -> Result<()> {
        if m.rows() != self.num_mappings() {
            return Err(Error::Shape {
                op,
                left: m.shape(),
                right: (self.num_mappings(), m.cols()),
            });
        }
        Ok(())
    }
}

impl ParamSet for GaeParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.u, &self.v, &self.w]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.u, &mut self.v, &mut self.w]
    }
}

/// Intermediate values of one mapping inference, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MappingInference {
    /// `U x`
    pub first_factors: Matrix,
    /// `V y`
    pub second_factors: Matrix,
    /// `(U x) ⊙ (V y)`, the pre-sigmoid factor products
    pub products: Matrix,
    /// `σ(W · products)`
    pub mappings: Matrix,
}

pub fn infer_mappings_full(p: &GaeParams, x1: &Matrix, x2: &Matrix) -> Result<MappingInference> {
    p.check_input(x1, "infer_mappings x1")?;
    p.check_input(x2, "infer_mappings x2")?;
    if x1.cols() != x2.cols() {
        return Err(Error::Shape {
            op: "infer_mappings batch",
            left: x1.shape(),
            right: x2.shape(),
        });
    }
    let first_factors = matmul(&p.u, x1, false, false)?;
    let second_factors = matmul(&p.v, x2, false, false)?;
    let products = first_factors.hadamard(&second_factors)?;
    let mappings = sigmoid(&matmul(&p.w, &products, false, false)?);
    Ok(MappingInference {
        first_factors,
        second_factors,
        products,
        mappings,
    })
}

/// Mapping units encoding the transformation that takes `x1` to `x2`.
pub fn infer_mappings(p: &GaeParams, x1: &Matrix, x2: &Matrix) -> Result<Matrix> {
    Ok(infer_mappings_full(p, x1, x2)?.mappings)
}

/// Which filter bank reads the frame and which one writes the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `Vᵀ((U x) ⊙ (Wᵀ m))`: takes the first frame of a pair to the second.
    Forward,
    /// `Uᵀ((V x) ⊙ (Wᵀ m))`: takes the second frame back to the first.
    Backward,
}

/// Intermediate values of one application of a transformation.
#[derive(Clone, Debug)]
pub struct TransformCache {
    /// filter responses of the input frame
    pub factors: Matrix,
    /// `Wᵀ m`
    pub gates: Matrix,
    pub gated: Matrix,
}

pub fn transform_full(
    p: &GaeParams,
    dir: Direction,
    x: &Matrix,
    m: &Matrix,
) -> Result<(Matrix, TransformCache)> {
    p.check_input(x, "transform frame")?;
    p.check_mappings(m, "transform mappings")?;
    if x.cols() != m.cols() {
        return Err(Error::Shape {
            op: "transform batch",
            left: x.shape(),
            right: m.shape(),
        });
    }
    let (read, write) = match dir {
        Direction::Forward => (&p.u, &p.v),
        Direction::Backward => (&p.v, &p.u),
    };
    let factors = matmul(read, x, false, false)?;
    let gates = matmul(&p.w, m, true, false)?;
    let gated = factors.hadamard(&gates)?;
    let out = matmul(write, &gated, true, false)?;
    Ok((
        out,
        TransformCache {
            factors,
            gates,
            gated,
        },
    ))
}

/// Applies the transformation encoded in `m` to `x` in the given direction.
pub fn transform(p: &GaeParams, dir: Direction, x: &Matrix, m: &Matrix) -> Result<Matrix> {
    Ok(transform_full(p, dir, x, m)?.0)
}

/// `x̂2 = Vᵀ((U x1) ⊙ (Wᵀ m))`
pub fn reconstruct_x2(p: &GaeParams, x1: &Matrix, m: &Matrix) -> Result<Matrix> {
    transform(p, Direction::Forward, x1, m)
}

/// `x̂1 = Uᵀ((V x2) ⊙ (Wᵀ m))`
pub fn reconstruct_x1(p: &GaeParams, x2: &Matrix, m: &Matrix) -> Result<Matrix> {
    transform(p, Direction::Backward, x2, m)
}

/// Predicts the frame after `x_curr` assuming the transformation from
/// `x_prev` to `x_curr` repeats.
pub fn predict_step(p: &GaeParams, x_prev: &Matrix, x_curr: &Matrix) -> Result<Matrix> {
    let m = infer_mappings(p, x_prev, x_curr)?;
    reconstruct_x2(p, x_curr, &m)
}

/// Backward pass through a mapping inference.
///
/// Accumulates parameter gradients into `grads` and returns the gradients with
/// respect to the two inputs when `input_grads` is set.
pub fn infer_backward(
    p: &GaeParams,
    x1: &Matrix,
    x2: &Matrix,
    cache: &MappingInference,
    d_mappings: &Matrix,
    grads: &mut GaeParams,
    input_grads: bool,
) -> Result<Option<(Matrix, Matrix)>> {
    let m = &cache.mappings;
    let mut d_pre = d_mappings.hadamard(m)?;
    for (d, &mv) in d_pre.data_mut().iter_mut().zip(m.data()) {
        *d *= 1.0 - mv;
    }
    matmul_acc(&mut grads.w, 1.0, &d_pre, false, &cache.products, true)?;
    let d_products = matmul(&p.w, &d_pre, true, false)?;
    let d_first = d_products.hadamard(&cache.second_factors)?;
    let d_second = d_products.hadamard(&cache.first_factors)?;
    matmul_acc(&mut grads.u, 1.0, &d_first, false, x1, true)?;
    matmul_acc(&mut grads.v, 1.0, &d_second, false, x2, true)?;
    if !input_grads {
        return Ok(None);
    }
    let dx1 = matmul(&p.u, &d_first, true, false)?;
    let dx2 = matmul(&p.v, &d_second, true, false)?;
    Ok(Some((dx1, dx2)))
}

/// Backward pass through [`transform_full`].
///
/// Returns `(d_input, d_mappings)`; `d_input` only when `input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn transform_backward(
    p: &GaeParams,
    dir: Direction,
    x: &Matrix,
    m: &Matrix,
    cache: &TransformCache,
    d_out: &Matrix,
    grads: &mut GaeParams,
    input_grad: bool,
) -> Result<(Option<Matrix>, Matrix)> {
    let (read, write, g_read, g_write) = match dir {
        Direction::Forward => (&p.u, &p.v, &mut grads.u, &mut grads.v),
        Direction::Backward => (&p.v, &p.u, &mut grads.v, &mut grads.u),
    };
    matmul_acc(g_write, 1.0, &cache.gated, false, d_out, true)?;
    let d_gated = matmul(write, d_out, false, false)?;
    let d_factors = d_gated.hadamard(&cache.gates)?;
    let d_gates = d_gated.hadamard(&cache.factors)?;
    matmul_acc(g_read, 1.0, &d_factors, false, x, true)?;
    matmul_acc(&mut grads.w, 1.0, m, false, &d_gates, true)?;
    let d_m = matmul(&p.w, &d_gates, false, false)?;
    let dx = if input_grad {
        Some(matmul(read, &d_factors, true, false)?)
    } else {
        None
    };
    Ok((dx, d_m))
}

/// Symmetric reconstruction error `‖x1−x̂1‖² + ‖x2−x̂2‖²`, averaged over the
/// batch columns, with exact gradients.
///
/// The mappings are a function of both inputs, so the gradient flows back
/// through them into `U`, `V` and `W`.
pub fn recon_loss_and_grads(p: &GaeParams, x1: &Matrix, x2: &Matrix) -> Result<(f64, GaeParams)> {
    let inf = infer_mappings_full(p, x1, x2)?;
    let (x2_hat, c2) = transform_full(p, Direction::Forward, x1, &inf.mappings)?;
    let (x1_hat, c1) = transform_full(p, Direction::Backward, x2, &inf.mappings)?;
    let r2 = x2_hat.sub(x2)?;
    let r1 = x1_hat.sub(x1)?;
    let batch = x1.cols().max(1) as f64;
    let loss = (r1.sum_squares() + r2.sum_squares()) / batch;

    let mut grads = p.zeros_like();
    let scale = 2.0 / batch;
    let (_, dm2) = transform_backward(
        p,
        Direction::Forward,
        x1,
        &inf.mappings,
        &c2,
        &r2.scale(scale),
        &mut grads,
        false,
    )?;
    let (_, mut dm) = transform_backward(
        p,
        Direction::Backward,
        x2,
        &inf.mappings,
        &c1,
        &r1.scale(scale),
        &mut grads,
        false,
    )?;
    dm.add_scaled(&dm2, 1.0)?;
    infer_backward(p, x1, x2, &inf, &dm, &mut grads, false)?;
    Ok((loss, grads))
}

pub fn recon_loss(p: &GaeParams, x1: &Matrix, x2: &Matrix) -> Result<f64> {
    let m = infer_mappings(p, x1, x2)?;
    let r2 = reconstruct_x2(p, x1, &m)?.sub(x2)?;
    let r1 = reconstruct_x1(p, x2, &m)?.sub(x1)?;
    Ok((r1.sum_squares() + r2.sum_squares()) / x1.cols().max(1) as f64)
}
