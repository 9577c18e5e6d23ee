//! Central finite-difference Jacobians.

use nalgebra::DMatrix;

use crate::error::Result;

/// Relative/absolute perturbation used per column: `max(1e-7, 1e-7 |x_j|)`.
pub const DEFAULT_REL_STEP: f64 = 1e-7;

pub fn default_step(x_j: f64) -> f64 {
    DEFAULT_REL_STEP * x_j.abs().max(1.0)
}

/// Jacobian of `f: R^n -> R^m` by central differences, column `j` perturbed
/// by `step(j, x_j)`. `f` receives the perturbed column index and writes its
/// value into the output slice.
pub fn central_jacobian<F, S>(x: &[f64], m: usize, mut f: F, step: S) -> Result<DMatrix<f64>>
where
    F: FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
    S: Fn(usize, f64) -> f64,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..n {
        let h = step(j, x[j]);
        xp[j] = x[j] + h;
        f(j, &xp, &mut fp)?;
        xp[j] = x[j] - h;
        f(j, &xp, &mut fm)?;
        xp[j] = x[j];
        // use the representable step actually taken
        let span = (x[j] + h) - (x[j] - h);
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / span;
        }
    }
    Ok(jac)
}
