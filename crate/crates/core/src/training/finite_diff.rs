use crate::error::{argument, Result};
use crate::params::ParamSet;

/// Central differences `(f(θ+h) − f(θ−h)) / 2h`, one coordinate at a time.
pub fn finite_difference_grads<P: ParamSet>(
    mut loss_fn: impl FnMut(&P) -> Result<f64>,
    params: &P,
    h: f64,
) -> Result<P> {
    if !(h > 0.0) {
        return Err(argument(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let counts: Vec<usize> = params.tensors().iter().map(|t| t.data().len()).collect();
    for (ti, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let orig = probe.tensors()[ti].data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = orig + h;
            let up = loss_fn(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig - h;
            let down = loss_fn(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            grads.tensors_mut()[ti].data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over all coordinates.
pub fn max_relative_error<P: ParamSet>(analytic: &P, numeric: &P) -> f64 {
    analytic
        .tensors()
        .iter()
        .zip(numeric.tensors())
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}
