//! PCA whitening for dimensionality reduction, and its inverse for taking
//! predictions back to pixel space.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{argument, Error, Result};
use crate::math::{matmul, Matrix};

pub const DEFAULT_TARGET_FRACTION: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform {
    /// pixel-space mean, `d_pixels × 1`
    pub mean: Matrix,
    /// `d_kept × d_pixels`
    pub forward: Matrix,
    /// `d_pixels × d_kept`
    pub inverse: Matrix,
    /// full spectrum of the covariance, descending
    pub eigenvalues: Vec<f64>,
    pub retained_fraction: f64,
}

impl WhiteningTransform {
    pub fn pixels(&self) -> usize {
        self.forward.cols()
    }

    pub fn kept(&self) -> usize {
        self.forward.rows()
    }

    /// Sum of the eigenvalues whose directions were dropped.
    pub fn discarded_variance(&self) -> f64 {
        self.eigenvalues[self.kept()..].iter().sum()
    }

    /// Whitens pixel-space columns: `forward · (x − mean)`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.pixels() {
            return Err(Error::Shape {
                op: "whitening apply",
                left: x.shape(),
                right: (self.pixels(), x.cols()),
            });
        }
        let mut centered = x.clone();
        let cols = x.cols();
        for (r, row) in centered.data_mut().chunks_mut(cols.max(1)).enumerate().take(x.rows()) {
            let m = self.mean.get(r, 0);
            row.iter_mut().for_each(|v| *v -= m);
        }
        matmul(&self.forward, &centered, false, false)
    }

    /// Maps whitened columns back to pixels: `inverse · z + mean`.
    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        if z.rows() != self.kept() {
            return Err(Error::Shape {
                op: "whitening invert",
                left: z.shape(),
                right: (self.kept(), z.cols()),
            });
        }
        let mut x = matmul(&self.inverse, z, false, false)?;
        let cols = x.cols();
        for (r, row) in x.data_mut().chunks_mut(cols.max(1)).enumerate().take(self.pixels()) {
            let m = self.mean.get(r, 0);
            row.iter_mut().for_each(|v| *v += m);
        }
        Ok(x)
    }
}

/// Fits a PCA whitening transform to pixel vectors stored as columns.
///
/// Keeps the smallest number of leading components whose share of the total
/// variance reaches `target_fraction`.
pub fn fit_whitening(samples: &Matrix, target_fraction: f64, eps: f64) -> Result<WhiteningTransform> {
    let (d, n) = samples.shape();
    if n < 2 {
        return Err(argument("whitening needs at least two samples"));
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(argument(format!("target fraction {target_fraction} not in (0, 1]")));
    }
    if !(eps >= 0.0) {
        return Err(argument("eps must be >= 0"));
    }
    let mean: Vec<f64> = (0..d).map(|r| samples.row(r).iter().sum::<f64>() / n as f64).collect();
    let mut centered = samples.clone();
    for (r, row) in centered.data_mut().chunks_mut(n).enumerate() {
        row.iter_mut().for_each(|v| *v -= mean[r]);
    }
    let mut cov = matmul(&centered, &centered, false, true)?;
    cov.scale_in_place(1.0 / n as f64);
    // exact symmetry for the eigensolver
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, s);
            cov.set(j, i, s);
        }
    }

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.data()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData("all samples are identical".into()));
    }

    let mut kept = 0;
    let mut cumulative = 0.0;
    for &lam in &eigenvalues {
        if lam <= 0.0 {
            break;
        }
        kept += 1;
        cumulative += lam;
        if cumulative / total >= target_fraction * (1.0 - 1e-12) {
            break;
        }
    }

    let mut forward = Matrix::zeros(kept, d);
    let mut inverse = Matrix::zeros(d, kept);
    for (row, &i) in order.iter().take(kept).enumerate() {
        let mut vec: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // sign convention: the largest-magnitude entry is positive
        let pivot = vec
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, &v)| if v.abs() > best.1.abs() { (j, v) } else { best })
            .0;
        if vec[pivot] < 0.0 {
            vec.iter_mut().for_each(|v| *v = -*v);
        }
        let scale = (eigenvalues[row] + eps).sqrt();
        for (c, &v) in vec.iter().enumerate() {
            forward.set(row, c, v / scale);
            inverse.set(c, row, v * scale);
        }
    }
    Ok(WhiteningTransform {
        mean: Matrix::column_vector(&mean),
        forward,
        inverse,
        retained_fraction: cumulative / total,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sample_gaussian;
    use crate::rng::Rng;

    fn covariance(z: &Matrix) -> Matrix {
        let n = z.cols() as f64;
        let mean: Vec<f64> = (0..z.rows()).map(|r| z.row(r).iter().sum::<f64>() / n).collect();
        let c = Matrix::from_fn(z.rows(), z.cols(), |r, j| z.get(r, j) - mean[r]);
        matmul(&c, &c, false, true).unwrap().scale(1.0 / n)
    }

    #[test]
    fn identity_covariance_whitens_to_identity() {
        let x = sample_gaussian(&mut Rng::new(1), 4, 10_000, 1.0).unwrap();
        let t = fit_whitening(&x, 1.0, DEFAULT_EPS).unwrap();
        assert_eq!(t.kept(), 4);
        let c = covariance(&t.apply(&x).unwrap());
        let err = c.sub(&Matrix::identity(4)).unwrap().frobenius_norm();
        assert!(err < 0.05, "frobenius error {err}");
    }

    #[test]
    fn line_data_keeps_one_component() {
        let mut rng = Rng::new(2);
        let cols: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let s = rng.standard_normal();
                vec![2.0 * s + 1.0, -s + 3.0]
            })
            .collect();
        let x = Matrix::from_columns(&cols).unwrap();
        let t = fit_whitening(&x, 0.95, DEFAULT_EPS).unwrap();
        assert_eq!(t.kept(), 1);
        assert!((t.retained_fraction - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let x = Matrix::filled(3, 10, 2.5);
        assert!(matches!(fit_whitening(&x, 0.95, DEFAULT_EPS), Err(Error::DegenerateData(_))));
        assert!(fit_whitening(&Matrix::zeros(3, 1), 0.95, DEFAULT_EPS).is_err());
        assert!(fit_whitening(&x, 0.0, DEFAULT_EPS).is_err());
    }

    fn correlated(seed: u64, d: usize, n: usize) -> Matrix {
        let mut rng = Rng::new(seed);
        let mix = sample_gaussian(&mut rng, d, d, 1.0).unwrap();
        let scales = Matrix::from_fn(d, d, |r, c| if r == c { 1.0 / (1.0 + r as f64) } else { 0.0 });
        let z = sample_gaussian(&mut rng, d, n, 1.0).unwrap();
        let x = matmul(&mix, &matmul(&scales, &z, false, false).unwrap(), false, false).unwrap();
        Matrix::from_fn(d, n, |r, c| x.get(r, c) + r as f64)
    }

    #[test]
    fn spectrum_sorted_and_fraction_consistent() {
        let x = correlated(3, 8, 2000);
        let t = fit_whitening(&x, 0.9, DEFAULT_EPS).unwrap();
        assert!(t.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(t.eigenvalues.iter().all(|&l| l >= 0.0));
        let total: f64 = t.eigenvalues.iter().sum();
        let kept: f64 = t.eigenvalues[..t.kept()].iter().sum();
        assert!((t.retained_fraction - kept / total).abs() < 1e-12);
        assert!(t.retained_fraction >= 0.9);
        // one fewer component would fall short
        let fewer: f64 = t.eigenvalues[..t.kept() - 1].iter().sum();
        assert!(fewer / total < 0.9);
    }

    #[test]
    fn whitened_components_decorrelated() {
        let x = correlated(4, 6, 10_000);
        let t = fit_whitening(&x, 1.0, DEFAULT_EPS).unwrap();
        let c = covariance(&t.apply(&x).unwrap());
        for i in 0..c.rows() {
            assert!((c.get(i, i) - 1.0).abs() < 0.1);
            for j in 0..c.cols() {
                if i != j {
                    assert!(c.get(i, j).abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn forward_rows_orthogonal_after_rescaling() {
        let x = correlated(5, 6, 3000);
        let t = fit_whitening(&x, 0.95, DEFAULT_EPS).unwrap();
        let scaled = Matrix::from_fn(t.kept(), t.pixels(), |r, c| {
            t.forward.get(r, c) * (t.eigenvalues[r] + DEFAULT_EPS).sqrt()
        });
        let gram = matmul(&scaled, &scaled, false, true).unwrap();
        assert!(gram.sub(&Matrix::identity(t.kept())).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn apply_and_invert_edge_cases() {
        let x = correlated(6, 5, 1000);
        let t = fit_whitening(&x, 1.0, 0.0).unwrap();
        let z = t.apply(&t.mean).unwrap();
        assert!(z.max_abs() < 1e-12);
        assert_eq!(t.invert(&Matrix::zeros(t.kept(), 1)).unwrap(), t.mean);
        let back = t.invert(&t.apply(&x).unwrap()).unwrap();
        assert!(back.sub(&x).unwrap().max_abs() < 1e-8);
        assert!(t.apply(&Matrix::zeros(4, 1)).is_err());
        assert!(t.invert(&Matrix::zeros(t.kept() + 1, 1)).is_err());
    }

    #[test]
    fn truncated_round_trip_error_matches_discarded_variance() {
        let x = correlated(7, 8, 5000);
        let t = fit_whitening(&x, 0.8, DEFAULT_EPS).unwrap();
        assert!(t.kept() < 8);
        let back = t.invert(&t.apply(&x).unwrap()).unwrap();
        let n = x.cols() as f64;
        let mean_sq_err = back.sub(&x).unwrap().sum_squares() / n;
        // projection error on the fit set equals the discarded spectrum
        let discarded = t.discarded_variance();
        assert!((mean_sq_err - discarded).abs() < 1e-6 * discarded.max(1.0));
    }

    #[test]
    fn affine_identity() {
        let x = correlated(8, 4, 500);
        let t = fit_whitening(&x, 1.0, DEFAULT_EPS).unwrap();
        let a = Matrix::column_vector(&[0.3, -1.0, 2.0, 0.5]);
        let b = Matrix::column_vector(&[1.5, 0.2, -0.7, 0.0]);
        let zero = Matrix::zeros(4, 1);
        let lhs = t.apply(&a.add(&b).unwrap()).unwrap().add(&t.apply(&zero).unwrap()).unwrap();
        let rhs = t.apply(&a).unwrap().add(&t.apply(&b).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10 * rhs.max_abs().max(1.0));
    }
}
