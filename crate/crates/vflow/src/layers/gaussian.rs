//! Conditional Gaussian reparameterization layer: in the sampling direction
//! it maps base noise eps to
//!
//!   z = mu(c) + exp(logsigma(c)) * eps,
//!
//! where both networks read the conditioning context c. This is the natural
//! head for low-dimensional conditionals (a coupling layer cannot represent
//! a one-dimensional conditional at all). logdet = sum logsigma(c).

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::mlp::MlpSpec;

#[derive(Debug, Clone)]
pub struct GaussianConditional {
    dim: usize,
    ctx_dim: usize,
    net: MlpSpec,
    /// [mu-net params | logsigma-net params].
    params: Vec<f64>,
}

impl GaussianConditional {
    pub fn new(
        dim: usize,
        ctx_dim: usize,
        hidden_units: usize,
        hidden_layers: usize,
        rng: &mut Rng,
    ) -> Self {
        // The conditioning variable is the network *input* here; there is no
        // separate primary input to inject context into.
        let net = MlpSpec {
            in_dim: ctx_dim,
            hidden_units,
            hidden_layers,
            out_dim: dim,
            ctx_dim: 0,
        };
        let n = net.param_count();
        let mut params = vec![0.0; 2 * n];
        net.init(&mut params[..n], rng);
        net.init(&mut params[n..], rng);
        GaussianConditional {
            dim,
            ctx_dim,
            net,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_dim(&self) -> usize {
        self.ctx_dim
    }

    pub fn net_spec(&self) -> &MlpSpec {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        let n = self.net.param_count();
        let (mu, s) = self.params.split_at_mut(n);
        self.net.randomize(mu, rng, scale);
        // Keep log-sigmas moderate so random instances stay well-conditioned.
        self.net.randomize(s, rng, 0.5 * scale);
    }

    fn nets(&self, ctx: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = ctx.ok_or(Error::DimMismatch {
            what: "gaussian conditional context",
            expected: self.ctx_dim,
            got: 0,
        })?;
        let n = self.net.param_count();
        let mu = self.net.forward(&self.params[..n], c, None)?;
        let ls = self.net.forward(&self.params[n..], c, None)?;
        Ok((mu, ls))
    }

    /// Sampling direction: eps -> z.
    pub fn forward(&self, eps: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        self.check(eps)?;
        let (mu, ls) = self.nets(ctx)?;
        let z: Vec<f64> = (0..self.dim)
            .map(|i| mu[i] + ls[i].exp() * eps[i])
            .collect();
        Ok((z, ls.iter().sum()))
    }

    /// Density direction: z -> eps.
    pub fn inverse(&self, z: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        self.check(z)?;
        let (mu, ls) = self.nets(ctx)?;
        let eps: Vec<f64> = (0..self.dim)
            .map(|i| (z[i] - mu[i]) * (-ls[i]).exp())
            .collect();
        Ok((eps, -ls.iter().sum::<f64>()))
    }

    pub fn backward(
        &self,
        eps: &[f64],
        ctx: Option<&[f64]>,
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(eps)?;
        let c = ctx.ok_or(Error::DimMismatch {
            what: "gaussian conditional context",
            expected: self.ctx_dim,
            got: 0,
        })?;
        let n = self.net.param_count();
        let (mu, mu_cache) = self.net.forward_cached(&self.params[..n], c, None)?;
        let (ls, ls_cache) = self.net.forward_cached(&self.params[n..], c, None)?;
        let _ = mu;

        let mut g_eps = vec![0.0; self.dim];
        let mut g_ls = vec![0.0; self.dim];
        for i in 0..self.dim {
            let e = ls[i].exp();
            g_eps[i] = g[i] * e;
            g_ls[i] = g[i] * e * eps[i] + g_logdet;
        }
        // g_mu is just g. The context gradient is the nets' input gradient.
        let (g_c_mu, _) = self.net.backward(&self.params[..n], &mu_cache, g, &mut grad[..n]);
        let (g_c_ls, _) = self.net.backward(&self.params[n..], &ls_cache, &g_ls, &mut grad[n..]);
        let g_ctx: Vec<f64> = g_c_mu.iter().zip(&g_c_ls).map(|(a, b)| a + b).collect();
        Ok((g_eps, g_ctx))
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                what: "gaussian conditional input",
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
    use crate::numerics::{finite_diff_gradient, rel_err, Rng};

    fn make(seed: u64) -> (GaussianConditional, Rng) {
        let mut rng = Rng::from_seed(seed);
        let mut l = GaussianConditional::new(2, 3, 6, 2, &mut rng);
        l.randomize(&mut rng, 1.0);
        (l, rng)
    }

    #[test]
    fn fresh_layer_is_standard_normal_head() {
        let mut rng = Rng::from_seed(1);
        let l = GaussianConditional::new(2, 3, 6, 2, &mut rng);
        let eps = [0.7, -0.2];
        let (z, ld) = l.forward(&eps, Some(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(z, eps.to_vec());
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn round_trip() {
        let (l, mut rng) = make(3);
        let eps = rng.normal_vec(2);
        let ctx = rng.normal_vec(3);
        let (z, ld) = l.forward(&eps, Some(&ctx)).unwrap();
        let (eps2, ld_inv) = l.inverse(&z, Some(&ctx)).unwrap();
        for (a, b) in eps.iter().zip(&eps2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ld + ld_inv).abs() < 1e-13);
    }

    #[test]
    fn missing_context_is_an_error() {
        let (l, mut rng) = make(4);
        let eps = rng.normal_vec(2);
        assert!(l.forward(&eps, None).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (l, mut rng) = make(5);
        let eps = rng.normal_vec(2);
        let ctx = rng.normal_vec(3);
        let g = rng.normal_vec(2);
        let gl = rng.normal();

        let loss = |params: &[f64], eps: &[f64], ctx: &[f64]| -> f64 {
            let mut layer = l.clone();
            layer.params_mut().copy_from_slice(params);
            let (z, ld) = layer.forward(eps, Some(ctx)).unwrap();
            z.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + gl * ld
        };

        let mut gp = vec![0.0; l.params().len()];
        let (g_eps, g_ctx) = l.backward(&eps, Some(&ctx), &g, gl, &mut gp).unwrap();

        let ngp = finite_diff_gradient(|q| loss(q, &eps, &ctx), l.params(), 1e-5);
        for (a, b) in gp.iter().zip(&ngp) {
            assert!(rel_err(*a, *b) < 1e-6, "param {a} vs {b}");
        }
        let nge = finite_diff_gradient(|q| loss(l.params(), q, &ctx), &eps, 1e-5);
        for (a, b) in g_eps.iter().zip(&nge) {
            assert!(rel_err(*a, *b) < 1e-6);
        }
        let ngc = finite_diff_gradient(|q| loss(l.params(), &eps, q), &ctx, 1e-5);
        for (a, b) in g_ctx.iter().zip(&ngc) {
            assert!(rel_err(*a, *b) < 1e-6);
        }
    }
}
