//! Independent numerical oracles.
//!
//! These are the reference implementations every piece of analytic math in
//! the library is checked against: central finite differences for gradients,
//! finite-difference Jacobians (with LU determinants) for log-dets, and
//! composite Simpson quadrature for one-dimensional integrals. They are kept
//! free of any flow-layer code on purpose.

use crate::error::{Error, Result};
use crate::numerics::linalg::lu_factor;

/// Central-difference gradient of a scalar function.
///
/// Step `h` is applied per coordinate: (f(x+h e_i) - f(x-h e_i)) / (2h).
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function, row-major
/// (row i = output i, column j = input j).
pub fn numeric_jacobian<F>(mut f: F, x: &[f64], h: f64) -> (Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut xp = x.to_vec();
    let out_dim = f(x).len();
    let mut jac = vec![0.0; out_dim * n];
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        for i in 0..out_dim {
            jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (jac, out_dim)
}

/// log |det J| of a square map via finite differences and LU.
///
/// Errors if the map is not square at this point or the Jacobian is
/// numerically singular.
pub fn numeric_jacobian_logdet<F>(f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let (jac, out_dim) = numeric_jacobian(f, x, h);
    if out_dim != n {
        return Err(Error::DimMismatch {
            what: "numeric_jacobian_logdet (map must be square)",
            expected: n,
            got: out_dim,
        });
    }
    let lu = lu_factor(&jac, n)?;
    Ok(lu.log_abs_det())
}

/// Composite Simpson quadrature of f over [lo, hi].
///
/// `nodes` is rounded up to the nearest odd count >= 3 so the interval splits
/// into an even number of panels.
pub fn quadrature_1d<F>(mut f: F, lo: f64, hi: f64, nodes: usize) -> f64
where
    F: FnMut(f64) -> f64,
{
    let n = if nodes < 3 {
        3
    } else if nodes % 2 == 0 {
        nodes + 1
    } else {
        nodes
    };
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n - 1 {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * k as f64);
    }
    acc * h / 3.0
}
