//! Affine coupling: split the coordinates into halves (x1, x2) by a mask and
//! map
//!
//!   y1 = x1,
//!   y2 = mu(x1) + exp(s(x1)) * x2,
//!
//! with mu and s produced by two independent networks of the pass-through
//! half (plus optional conditioning context). The log-determinant is the sum
//! of the effective log-scales over the transformed half.
//!
//! The raw s outputs are squashed to (-5, 5) by 5*tanh(s/5) before
//! exponentiation (soft clamp; can be disabled), which keeps the scale
//! factors inside [e^-5, e^5] without losing differentiability.

use crate::error::Result;
use crate::numerics::Rng;

use super::mask::SplitMask;
use super::mlp::MlpSpec;

/// Soft clamp bound for raw log-scales.
pub const S_CLAMP_BOUND: f64 = 5.0;

pub(crate) fn clamp_s(raw: f64, enabled: bool) -> f64 {
    if enabled {
        S_CLAMP_BOUND * (raw / S_CLAMP_BOUND).tanh()
    } else {
        raw
    }
}

pub(crate) fn clamp_s_deriv(raw: f64, enabled: bool) -> f64 {
    if enabled {
        let t = (raw / S_CLAMP_BOUND).tanh();
        1.0 - t * t
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct AffineCoupling {
    mask: SplitMask,
    net: MlpSpec,
    s_clamp: bool,
    /// [mu-net params | s-net params]; both nets share `net`'s shape.
    params: Vec<f64>,
}

impl AffineCoupling {
    /// Build with freshly initialized (identity) networks.
    pub fn new(
        mask: SplitMask,
        hidden_units: usize,
        hidden_layers: usize,
        ctx_dim: usize,
        s_clamp: bool,
        rng: &mut Rng,
    ) -> Self {
        let net = MlpSpec {
            in_dim: mask.n_pass(),
            hidden_units,
            hidden_layers,
            out_dim: mask.n_trans(),
            ctx_dim,
        };
        let n = net.param_count();
        let mut params = vec![0.0; 2 * n];
        net.init(&mut params[..n], rng);
        net.init(&mut params[n..], rng);
        AffineCoupling {
            mask,
            net,
            s_clamp,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn context_dim(&self) -> usize {
        self.net.ctx_dim
    }

    pub fn mask(&self) -> &SplitMask {
        &self.mask
    }

    pub fn net_spec(&self) -> &MlpSpec {
        &self.net
    }

    pub fn s_clamp(&self) -> bool {
        self.s_clamp
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn mu_params(&self) -> &[f64] {
        &self.params[..self.net.param_count()]
    }

    pub fn s_params(&self) -> &[f64] {
        &self.params[self.net.param_count()..]
    }

    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        let n = self.net.param_count();
        let (mu, s) = self.params.split_at_mut(n);
        self.net.randomize(mu, rng, scale);
        self.net.randomize(s, rng, scale);
    }

    pub fn forward(&self, x: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let n = self.net.param_count();
        let x1 = self.mask.gather_pass(x);
        let x2 = self.mask.gather_trans(x);
        let mu = self.net.forward(&self.params[..n], &x1, ctx)?;
        let s_raw = self.net.forward(&self.params[n..], &x1, ctx)?;
        let mut ld = 0.0;
        let y2: Vec<f64> = (0..x2.len())
            .map(|i| {
                let se = clamp_s(s_raw[i], self.s_clamp);
                ld += se;
                mu[i] + se.exp() * x2[i]
            })
            .collect();
        Ok((self.mask.scatter(&x1, &y2), ld))
    }

    pub fn inverse(&self, y: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let n = self.net.param_count();
        let y1 = self.mask.gather_pass(y);
        let y2 = self.mask.gather_trans(y);
        let mu = self.net.forward(&self.params[..n], &y1, ctx)?;
        let s_raw = self.net.forward(&self.params[n..], &y1, ctx)?;
        let mut ld = 0.0;
        let x2: Vec<f64> = (0..y2.len())
            .map(|i| {
                let se = clamp_s(s_raw[i], self.s_clamp);
                ld -= se;
                (y2[i] - mu[i]) * (-se).exp()
            })
            .collect();
        Ok((self.mask.scatter(&y1, &x2), ld))
    }

    pub fn backward(
        &self,
        x: &[f64],
        ctx: Option<&[f64]>,
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.net.param_count();
        let x1 = self.mask.gather_pass(x);
        let x2 = self.mask.gather_trans(x);
        let g1 = self.mask.gather_pass(g);
        let g2 = self.mask.gather_trans(g);

        let (mu, mu_cache) = self.net.forward_cached(&self.params[..n], &x1, ctx)?;
        let (s_raw, s_cache) = self.net.forward_cached(&self.params[n..], &x1, ctx)?;
        let _ = mu;

        // Gradients at the network outputs and the transformed inputs.
        let mut g_mu = vec![0.0; x2.len()];
        let mut g_s_raw = vec![0.0; x2.len()];
        let mut g_x2 = vec![0.0; x2.len()];
        for i in 0..x2.len() {
            let se = clamp_s(s_raw[i], self.s_clamp);
            let e = se.exp();
            g_mu[i] = g2[i];
            // d/ds_eff of (g2 * y2 + gl * ld), then through the clamp.
            g_s_raw[i] =
                (g2[i] * e * x2[i] + g_logdet) * clamp_s_deriv(s_raw[i], self.s_clamp);
            g_x2[i] = g2[i] * e;
        }

        let (g_x1_mu, g_ctx_mu) = self.net.backward(&self.params[..n], &mu_cache, &g_mu, &mut grad[..n]);
        let (g_x1_s, g_ctx_s) = self.net.backward(&self.params[n..], &s_cache, &g_s_raw, &mut grad[n..]);

        let g_x1: Vec<f64> = (0..x1.len())
            .map(|i| g1[i] + g_x1_mu[i] + g_x1_s[i])
            .collect();
        let g_ctx: Vec<f64> = g_ctx_mu
            .iter()
            .zip(g_ctx_s.iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok((self.mask.scatter(&g_x1, &g_x2), g_ctx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{
        finite_diff_gradient, numeric_jacobian_logdet, rel_err, Rng,
    };

    fn make(ctx_dim: usize, clamp: bool, seed: u64) -> (AffineCoupling, Rng) {
        let mut rng = Rng::from_seed(seed);
        let mut l = AffineCoupling::new(SplitMask::checker(4), 6, 2, ctx_dim, clamp, &mut rng);
        l.randomize(&mut rng, 1.0);
        (l, rng)
    }

    #[test]
    fn fresh_layer_is_identity() {
        let mut rng = Rng::from_seed(1);
        let l = AffineCoupling::new(SplitMask::checker(4), 6, 2, 0, true, &mut rng);
        let x = [0.3, -1.0, 2.0, 0.7];
        let (y, ld) = l.forward(&x, None).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn constant_nets_give_known_output() {
        // With mu = 0.5 and s = ln 2 the transformed half maps to
        // 0.5 + 2 x2 and the logdet is n_trans * ln 2.
        let mut rng = Rng::from_seed(2);
        let mut l = AffineCoupling::new(SplitMask::checker(4), 0, 0, 0, false, &mut rng);
        // Linear nets (in=2, out=2): zero the weights, set biases.
        let n = l.net.param_count();
        l.params[..n].fill(0.0);
        l.params[n..].fill(0.0);
        // [W (2x2) | b (2)]: bias entries are at offsets 4 and 5.
        l.params[4] = 0.5;
        l.params[5] = 0.5;
        l.params[n + 4] = 2f64.ln();
        l.params[n + 5] = 2f64.ln();
        let x = [1.0, 3.0, -2.0, 0.25];
        let (y, ld) = l.forward(&x, None).unwrap();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[2], -2.0);
        assert!((y[1] - (0.5 + 2.0 * 3.0)).abs() < 1e-14);
        assert!((y[3] - (0.5 + 2.0 * 0.25)).abs() < 1e-14);
        assert!((ld - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn round_trip_and_logdet_antisymmetry() {
        for ctx_dim in [0, 3] {
            let (l, mut rng) = make(ctx_dim, true, 5 + ctx_dim as u64);
            let x = rng.normal_vec(4);
            let ctx = (ctx_dim > 0).then(|| rng.normal_vec(ctx_dim));
            let (y, ld) = l.forward(&x, ctx.as_deref()).unwrap();
            let (x2, ld_inv) = l.inverse(&y, ctx.as_deref()).unwrap();
            for (a, b) in x.iter().zip(&x2) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((ld + ld_inv).abs() < 1e-13);
        }
    }

    #[test]
    fn logdet_matches_numeric_jacobian() {
        for clamp in [false, true] {
            let (l, mut rng) = make(0, clamp, 7);
            let x = rng.normal_vec(4);
            let (_, ld) = l.forward(&x, None).unwrap();
            let nld =
                numeric_jacobian_logdet(|v| l.forward(v, None).unwrap().0, &x, 1e-5).unwrap();
            assert!(rel_err(ld, nld) < 1e-7, "clamp={clamp}: {ld} vs {nld}");
        }
    }

    #[test]
    fn clamp_bounds_effective_scale() {
        let (mut l, mut rng) = make(0, true, 8);
        // Blow up the s-net biases; effective log-scales must stay in (-5,5).
        let n = l.net.param_count();
        for p in l.params[n..].iter_mut() {
            *p += 3.0 * rng.normal();
        }
        let x = rng.normal_vec(4);
        let (_, ld) = l.forward(&x, None).unwrap();
        assert!(ld.abs() <= 2.0 * S_CLAMP_BOUND + 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (ctx_dim, clamp) in [(0, true), (3, true), (0, false), (3, false)] {
            let (l, mut rng) = make(ctx_dim, clamp, 40 + ctx_dim as u64);
            let x = rng.normal_vec(4);
            let ctx = (ctx_dim > 0).then(|| rng.normal_vec(ctx_dim));
            let g = rng.normal_vec(4);
            let gl = rng.normal();

            let loss = |params: &[f64], x: &[f64], ctx: Option<&[f64]>| -> f64 {
                let mut layer = l.clone();
                layer.params_mut().copy_from_slice(params);
                let (y, ld) = layer.forward(x, ctx).unwrap();
                y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + gl * ld
            };

            let mut gp = vec![0.0; l.params().len()];
            let (gx, gctx) = l.backward(&x, ctx.as_deref(), &g, gl, &mut gp).unwrap();

            let ngp = finite_diff_gradient(|q| loss(q, &x, ctx.as_deref()), l.params(), 1e-5);
            for (a, b) in gp.iter().zip(&ngp) {
                assert!(rel_err(*a, *b) < 1e-5, "param grad {a} vs {b}");
            }
            let ngx = finite_diff_gradient(|q| loss(l.params(), q, ctx.as_deref()), &x, 1e-5);
            for (a, b) in gx.iter().zip(&ngx) {
                assert!(rel_err(*a, *b) < 1e-5, "input grad {a} vs {b}");
            }
            if let Some(c) = &ctx {
                let ngc = finite_diff_gradient(|q| loss(l.params(), &x, Some(q)), c, 1e-5);
                for (a, b) in gctx.iter().zip(&ngc) {
                    assert!(rel_err(*a, *b) < 1e-5, "ctx grad {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_output_nets_pass_upstream_gradient_through() {
        // With both nets zeroed the layer is the identity, so the gradient
        // on the pass-through half is exactly the upstream gradient.
        let mut rng = Rng::from_seed(60);
        let mut l = AffineCoupling::new(SplitMask::checker(4), 6, 2, 0, true, &mut rng);
        let n = l.net.param_count();
        let (mu, s) = l.params.split_at_mut(n);
        l.net.randomize(mu, &mut rng, 1.0);
        l.net.randomize(s, &mut rng, 1.0);
        l.net.zero_output_stage(mu);
        l.net.zero_output_stage(s);
        let x = rng.normal_vec(4);
        let g = rng.normal_vec(4);
        let mut gp = vec![0.0; l.params().len()];
        let (gx, _) = l.backward(&x, None, &g, 0.0, &mut gp).unwrap();
        for i in [0usize, 2] {
            assert_eq!(gx[i], g[i]);
        }
        for i in [1usize, 3] {
            assert_eq!(gx[i], g[i]);
        }
    }
}
