//! Few-step generation on the uniform dyadic grid.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::{AverageVelocity, Condition};

/// `x_k = x_{k+1} - (1/K) u_{t_k, t_{k+1}}(x_{k+1} | cond)` with
/// `t_k = k / K`. Returns `[x_K, ..., x_0]` after exactly `K` model calls.
pub fn sample<M: AverageVelocity + ?Sized>(model: &M, x1: &Tensor, steps: usize, cond: Condition) -> Result<Vec<Tensor>> {
    if !steps.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("step count {steps} is not a power of two")));
    }
    let n = x1.rows();
    let mut traj = vec![x1.clone()];
    let mut x = x1.clone();
    let delta = 1.0 / steps as f64;
    for k in (0..steps).rev() {
        let (s, t) = (k as f64 * delta, (k + 1) as f64 * delta);
        let u = model.average_velocity(&x, &vec![s; n], &vec![t; n], &vec![cond; n])?;
        x = x.axpy(-delta, &u)?;
        if !x.is_finite() {
            return Err(Error::Numeric(format!("non-finite state at step {k}")));
        }
        traj.push(x.clone());
    }
    Ok(traj)
}

/// The final iterate `x_0`.
pub fn sample_endpoint<M: AverageVelocity + ?Sized>(model: &M, x1: &Tensor, steps: usize, cond: Condition) -> Result<Tensor> {
    Ok(sample(model, x1, steps, cond)?.pop().expect("trajectory has an endpoint"))
}
