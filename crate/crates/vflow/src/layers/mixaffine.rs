//! Entry layer for augmented vectors, laid out [x | z] with x in the leading
//! coordinates. The augmented block conditions an affine transform of the
//! data block and the two blocks swap places:
//!
//!   y = [ z | mu(z) + exp(s(z)) * x ],
//!
//! so downstream layers see a fully mixed vector. logdet = sum s(z); the raw
//! s outputs pass through the same soft clamp as affine coupling.

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::affine::{clamp_s, clamp_s_deriv};
use super::mlp::MlpSpec;

#[derive(Debug, Clone)]
pub struct MixAffine {
    d_x: usize,
    d_z: usize,
    net: MlpSpec,
    s_clamp: bool,
    /// [mu-net params | s-net params]; nets map z (d_z) to x-block (d_x).
    params: Vec<f64>,
}

impl MixAffine {
    pub fn new(
        d_x: usize,
        d_z: usize,
        hidden_units: usize,
        hidden_layers: usize,
        s_clamp: bool,
        rng: &mut Rng,
    ) -> Self {
        let net = MlpSpec {
            in_dim: d_z,
            hidden_units,
            hidden_layers,
            out_dim: d_x,
            ctx_dim: 0,
        };
        let n = net.param_count();
        let mut params = vec![0.0; 2 * n];
        net.init(&mut params[..n], rng);
        net.init(&mut params[n..], rng);
        MixAffine {
            d_x,
            d_z,
            net,
            s_clamp,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.d_x + self.d_z
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_z(&self) -> usize {
        self.d_z
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

    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        let n = self.net.param_count();
        let (mu, s) = self.params.split_at_mut(n);
        self.net.randomize(mu, rng, scale);
        self.net.randomize(s, rng, scale);
    }

    pub fn forward(&self, v: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(v)?;
        let n = self.net.param_count();
        let (x, z) = v.split_at(self.d_x);
        let mu = self.net.forward(&self.params[..n], z, None)?;
        let s_raw = self.net.forward(&self.params[n..], z, None)?;
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(z);
        let mut ld = 0.0;
        for i in 0..self.d_x {
            let se = clamp_s(s_raw[i], self.s_clamp);
            ld += se;
            out.push(mu[i] + se.exp() * x[i]);
        }
        Ok((out, ld))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        let n = self.net.param_count();
        let (z, yx) = y.split_at(self.d_z);
        let mu = self.net.forward(&self.params[..n], z, None)?;
        let s_raw = self.net.forward(&self.params[n..], z, None)?;
        let mut out = Vec::with_capacity(self.dim());
        let mut ld = 0.0;
        for i in 0..self.d_x {
            let se = clamp_s(s_raw[i], self.s_clamp);
            ld -= se;
            out.push((yx[i] - mu[i]) * (-se).exp());
        }
        out.extend_from_slice(z);
        Ok((out, ld))
    }

    pub fn backward(
        &self,
        v: &[f64],
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check(v)?;
        let n = self.net.param_count();
        let (x, z) = v.split_at(self.d_x);
        let (g_z_direct, g_yx) = g.split_at(self.d_z);

        let (mu, mu_cache) = self.net.forward_cached(&self.params[..n], z, None)?;
        let (s_raw, s_cache) = self.net.forward_cached(&self.params[n..], z, None)?;
        let _ = mu;

        let mut g_s_raw = vec![0.0; self.d_x];
        let mut g_x = vec![0.0; self.d_x];
        for i in 0..self.d_x {
            let se = clamp_s(s_raw[i], self.s_clamp);
            let e = se.exp();
            g_s_raw[i] = (g_yx[i] * e * x[i] + g_logdet) * clamp_s_deriv(s_raw[i], self.s_clamp);
            g_x[i] = g_yx[i] * e;
        }
        let (g_z_mu, _) = self.net.backward(&self.params[..n], &mu_cache, g_yx, &mut grad[..n]);
        let (g_z_s, _) = self.net.backward(&self.params[n..], &s_cache, &g_s_raw, &mut grad[n..]);

        let mut g_v = g_x;
        for i in 0..self.d_z {
            g_v.push(g_z_direct[i] + g_z_mu[i] + g_z_s[i]);
        }
        Ok(g_v)
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimMismatch {
                what: "mix affine input",
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}
