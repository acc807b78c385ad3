//! Invertible pointwise linear map y = x W (row-vector convention), the
//! dense generalization of a channel permutation. The log-determinant and
//! the inverse are computed by pivoted LU factorization on each call; the
//! layer is meant for small widths (<= 32 or so).

use crate::error::{Error, Result};
use crate::numerics::linalg::{lu_factor, vec_mat};
use crate::numerics::Rng;

#[derive(Debug, Clone)]
pub struct PointwiseLinear {
    dim: usize,
    /// W, row-major (dim x dim).
    params: Vec<f64>,
}

impl PointwiseLinear {
    pub fn identity(dim: usize) -> Self {
        let mut params = vec![0.0; dim * dim];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        PointwiseLinear { dim, params }
    }

    /// Random rotation (orthogonal, det +1): the usual initialization, so the
    /// layer starts volume-preserving. Built by Gram-Schmidt on a Gaussian
    /// matrix with sign fixing.
    pub fn random_rotation(dim: usize, rng: &mut Rng) -> Self {
        let mut cols: Vec<Vec<f64>> = (0..dim).map(|_| rng.normal_vec(dim)).collect();
        for j in 0..dim {
            for k in 0..j {
                let dot: f64 = (0..dim).map(|i| cols[j][i] * cols[k][i]).sum();
                for i in 0..dim {
                    cols[j][i] -= dot * cols[k][i];
                }
            }
            let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut cols[j] {
                *v /= norm;
            }
        }
        let mut params = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                params[i * dim + j] = cols[j][i];
            }
        }
        let mut layer = PointwiseLinear { dim, params };
        // Force det = +1 by flipping one column if needed.
        if let Ok(lu) = lu_factor(&layer.params, dim) {
            if lu.det_sign() < 0.0 {
                for i in 0..dim {
                    layer.params[i * dim] = -layer.params[i * dim];
                }
            }
        }
        layer
    }

    pub fn from_matrix(w: Vec<f64>, dim: usize) -> Result<Self> {
        if w.len() != dim * dim {
            return Err(Error::DimMismatch {
                what: "pointwise linear construction",
                expected: dim * dim,
                got: w.len(),
            });
        }
        // Reject singular matrices up front.
        lu_factor(&w, dim)?;
        Ok(PointwiseLinear { dim, params: w })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rotation plus scaled Gaussian noise: stays comfortably invertible for
    /// small scales while having a non-trivial determinant.
    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        *self = Self::random_rotation(self.dim, rng);
        for p in &mut self.params {
            *p += 0.3 * scale * rng.normal();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        let lu = lu_factor(&self.params, self.dim)?;
        Ok((vec_mat(x, &self.params, self.dim), lu.log_abs_det()))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        let lu = lu_factor(&self.params, self.dim)?;
        // x W = y  <=>  W^T x^T = y^T; solve via the inverse (dim is small).
        let inv = lu.inverse()?;
        Ok((vec_mat(y, &inv, self.dim), -lu.log_abs_det()))
    }

    /// Gradients of L = <g, x W> + g_logdet * log|det W|.
    /// dL/dW = x^T g + g_logdet * W^{-T}; dL/dx = g W^T.
    pub fn backward(
        &self,
        x: &[f64],
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check(x)?;
        let n = self.dim;
        let lu = lu_factor(&self.params, n)?;
        let inv = lu.inverse()?;
        let mut gx = vec![0.0; n];
        for i in 0..n {
            let row = &self.params[i * n..(i + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * g[j];
                grad[i * n + j] += x[i] * g[j] + g_logdet * inv[j * n + i];
            }
            gx[i] = s;
        }
        Ok(gx)
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                what: "pointwise linear input",
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}
