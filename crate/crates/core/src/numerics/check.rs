//! Finite-difference gradient checking.
//!
//! Central differences around each parameter scalar give a numerical
//! gradient to compare against a backward pass. Kept as a library module so
//! integration tests can drive it against whole models.

use crate::numerics::matrix::Matrix;
use crate::numerics::params::{Gradients, ParamId, ParamSet};

/// Central finite-difference gradient of `f` with respect to every scalar
/// in `params`. `f` is evaluated with the perturbed parameter set; it must
/// be deterministic for the estimate to mean anything, so re-seed any noise
/// inside `f` on every call.
pub fn finite_difference<F>(params: &mut ParamSet, h: f64, mut f: F) -> Vec<Matrix>
where
    F: FnMut(&ParamSet) -> f64,
{
    let ids: Vec<ParamId> = params.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let len = params.get(id).len();
        let (rows, cols) = (params.get(id).rows(), params.get(id).cols());
        let mut grad = Matrix::zeros(rows, cols);
        for i in 0..len {
            let orig = params.get(id).as_slice()[i];
            params.get_mut(id).as_mut_slice()[i] = orig + h;
            let plus = f(params);
            params.get_mut(id).as_mut_slice()[i] = orig - h;
            let minus = f(params);
            params.get_mut(id).as_mut_slice()[i] = orig;
            grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// `|a - b| / max(|a| + |b|, 1e-5)`, the usual scale-free comparison for
/// gradient checks. The absolute floor keeps central-difference roundoff
/// (about `|f| * 1e-16 / h`, i.e. 1e-11-ish at h=1e-5) from dominating the
/// ratio on entries whose true gradient is near zero; structural mistakes
/// produce differences orders of magnitude above it.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-5)
}

/// Worst relative error between an analytic gradient and a numerical one,
/// over every scalar of every tensor.
pub fn max_relative_error(params: &ParamSet, analytic: &Gradients, numeric: &[Matrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, id) in params.ids().enumerate() {
        let a = analytic.get(id).as_slice();
        let n = numeric[i].as_slice();
        for j in 0..a.len() {
            worst = worst.max(relative_error(n[j], a[j]));
        }
    }
    worst
}
