//! Central finite differences.
//!
//! Used as the fallback for user-supplied functions that come without
//! analytic derivatives. Steps are relative: `h_i = rel_step * max(1, |x_i|)`.

use nalgebra::{DMatrix, DVector, RowDVector};

/// Step used for scalar gradients.
pub const GRADIENT_REL_STEP: f64 = 1e-6;
/// Step used for Jacobians of the sliding variable.
pub const JACOBIAN_REL_STEP: f64 = 1e-5;

fn step(rel: f64, xi: f64) -> f64 {
    rel * xi.abs().max(1.0)
}

pub fn central_gradient<F>(f: F, x: &DVector<f64>, rel_step: f64) -> RowDVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    RowDVector::from_fn(x.len(), |_, i| {
        let h = step(rel_step, x[i]);
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        (plus - minus) / (2.0 * h)
    })
}

/// Jacobian of a row-valued map, `rows x x.len()`.
pub fn central_jacobian<F, E>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>, E>
where
    F: Fn(&DVector<f64>) -> Result<RowDVector<f64>, E>,
{
    let n = x.len();
    let mut probe = x.clone();
    let mut columns = Vec::with_capacity(n);
    for i in 0..n {
        let h = step(rel_step, x[i]);
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        columns.push(((plus - minus) / (2.0 * h)).transpose());
    }
    Ok(DMatrix::from_columns(&columns))
}
