//! Activation normalization: the per-coordinate affine map
//! y_i = exp(log_scale_i) * x_i + bias_i.
//!
//! Freshly constructed layers are the identity; training replaces that with
//! a data-dependent initialization (zero mean, unit variance on the first
//! batch) before the first step.

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone)]
pub struct ActNorm {
    dim: usize,
    /// [log_scale (dim) | bias (dim)].
    params: Vec<f64>,
}

impl ActNorm {
    pub fn identity(dim: usize) -> Self {
        ActNorm {
            dim,
            params: vec![0.0; 2 * dim],
        }
    }

    pub fn with_params(log_scale: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if log_scale.len() != bias.len() {
            return Err(Error::DimMismatch {
                what: "actnorm construction",
                expected: log_scale.len(),
                got: bias.len(),
            });
        }
        let dim = log_scale.len();
        let mut params = log_scale;
        params.extend_from_slice(&bias);
        Ok(ActNorm { dim, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.params[..self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.dim..]
    }

    /// Set scale/bias so that inputs with the given per-coordinate mean and
    /// standard deviation map to zero mean and unit variance.
    pub fn init_from_moments(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        if mean.len() != self.dim || std.len() != self.dim {
            return Err(Error::DimMismatch {
                what: "actnorm moment init",
                expected: self.dim,
                got: mean.len().min(std.len()),
            });
        }
        for i in 0..self.dim {
            // Guard collapsed coordinates; a constant input gets scale 1.
            let s = if std[i] > 1e-6 { std[i] } else { 1.0 };
            self.params[i] = -s.ln();
            self.params[self.dim + i] = -mean[i] / s;
        }
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        for p in &mut self.params[..self.dim] {
            *p = 0.3 * scale * rng.normal();
        }
        for p in &mut self.params[self.dim..] {
            *p = 0.5 * scale * rng.normal();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        let ls = self.log_scale();
        let b = self.bias();
        let y: Vec<f64> = (0..self.dim)
            .map(|i| ls[i].exp() * x[i] + b[i])
            .collect();
        Ok((y, ls.iter().sum()))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        let ls = self.log_scale();
        let b = self.bias();
        let x: Vec<f64> = (0..self.dim)
            .map(|i| (y[i] - b[i]) * (-ls[i]).exp())
            .collect();
        Ok((x, -ls.iter().sum::<f64>()))
    }

    /// Gradients of L = <g, forward(x)> + g_logdet * logdet.
    pub fn backward(
        &self,
        x: &[f64],
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check(x)?;
        let ls = self.log_scale();
        let mut gx = vec![0.0; self.dim];
        for i in 0..self.dim {
            let e = ls[i].exp();
            gx[i] = g[i] * e;
            grad[i] += g[i] * e * x[i] + g_logdet; // d/d log_scale
            grad[self.dim + i] += g[i]; // d/d bias
        }
        Ok(gx)
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                what: "actnorm input",
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, rel_err};

    #[test]
    fn identity_maps_input_to_itself_with_zero_logdet() {
        let l = ActNorm::identity(3);
        let (y, ld) = l.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 0.5]);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let l = ActNorm::with_params(vec![0.3, -0.7], vec![1.0, 2.0]).unwrap();
        let x = [0.4, -1.1];
        let (y, ld) = l.forward(&x).unwrap();
        let (x2, ld_inv) = l.inverse(&y).unwrap();
        for (a, b) in x.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((ld + ld_inv).abs() < 1e-15);
        assert!((ld - (0.3 - 0.7)).abs() < 1e-15);
    }

    #[test]
    fn moment_init_normalizes() {
        let mut l = ActNorm::identity(2);
        l.init_from_moments(&[3.0, -1.0], &[2.0, 0.5]).unwrap();
        let (y, _) = l.forward(&[3.0, -1.0]).unwrap();
        assert!(y[0].abs() < 1e-14 && y[1].abs() < 1e-14);
        let (y2, _) = l.forward(&[5.0, -0.5]).unwrap();
        assert!((y2[0] - 1.0).abs() < 1e-14);
        assert!((y2[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::numerics::Rng::from_seed(4);
        let mut l = ActNorm::identity(3);
        l.randomize(&mut rng, 1.0);
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let gl: f64 = rng.normal();

        let loss = |params: &[f64], x: &[f64]| -> f64 {
            let layer = ActNorm {
                dim: 3,
                params: params.to_vec(),
            };
            let (y, ld) = layer.forward(x).unwrap();
            y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + gl * ld
        };

        let mut gp = vec![0.0; 6];
        let gx = l.backward(&x, &g, gl, &mut gp).unwrap();
        let ngp = finite_diff_gradient(|q| loss(q, &x), l.params(), 1e-5);
        let ngx = finite_diff_gradient(|q| loss(l.params(), q), &x, 1e-5);
        for (a, b) in gp.iter().zip(&ngp) {
            assert!(rel_err(*a, *b) < 1e-7);
        }
        for (a, b) in gx.iter().zip(&ngx) {
            assert!(rel_err(*a, *b) < 1e-7);
        }
    }
}
