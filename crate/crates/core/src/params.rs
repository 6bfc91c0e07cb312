use crate::math::Matrix;

/// A fixed, ordered collection of parameter matrices.
///
/// Optimizers, finite-difference checks and checkpointing walk parameters
/// through this view, so gradients share the type of the parameters they
/// belong to.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }
}
