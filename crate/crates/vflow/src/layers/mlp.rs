//! The shared coupling network: a tanh MLP over a flat parameter slice, with
//! optional conditioning.
//!
//! Conditioning context enters through one learned linear map whose output is
//! added to the first pre-activation. Parameters live in one flat buffer so
//! that optimizer steps, checkpointing, and finite-difference checks can
//! treat every layer uniformly; this module defines the layout and the
//! hand-written backward pass.
//!
//! Layout of the parameter slice, in order:
//!   W_0 (in x h_0, row-major by input), b_0 (h_0),
//!   W_1 (h_0 x h_1), b_1, ..., W_B (h x out), b_B (out),
//!   then, when ctx_dim > 0: W_ctx (ctx_dim x h_0).
//! With zero hidden layers the single linear map is also the "first"
//! pre-activation, so context is added to the output directly.

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub in_dim: usize,
    /// Width of each hidden layer.
    pub hidden_units: usize,
    /// Number of hidden (tanh) layers; zero means a single linear map.
    pub hidden_layers: usize,
    pub out_dim: usize,
    /// Zero for unconditional networks.
    pub ctx_dim: usize,
}

impl MlpSpec {
    /// Sizes (in, out) of each linear map, in application order.
    pub fn linear_dims(&self) -> Vec<(usize, usize)> {
        if self.hidden_layers == 0 {
            return vec![(self.in_dim, self.out_dim)];
        }
        let mut dims = vec![(self.in_dim, self.hidden_units)];
        for _ in 1..self.hidden_layers {
            dims.push((self.hidden_units, self.hidden_units));
        }
        dims.push((self.hidden_units, self.out_dim));
        dims
    }

    /// Width of the first pre-activation (where context is injected).
    pub fn first_width(&self) -> usize {
        if self.hidden_layers == 0 {
            self.out_dim
        } else {
            self.hidden_units
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n: usize = self.linear_dims().iter().map(|(i, o)| i * o + o).sum();
        if self.ctx_dim > 0 {
            n += self.ctx_dim * self.first_width();
        }
        n
    }

    /// (name suffix, shape) of each parameter block, in layout order.
    pub fn entries(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, (ind, outd)) in self.linear_dims().iter().enumerate() {
            out.push((format!("w{i}"), vec![*ind, *outd]));
            out.push((format!("b{i}"), vec![*outd]));
        }
        if self.ctx_dim > 0 {
            out.push(("ctx".to_string(), vec![self.ctx_dim, self.first_width()]));
        }
        out
    }

    /// Training initialization: hidden maps get fan-in-scaled normal weights,
    /// the output map starts at zero (so freshly built coupling layers are
    /// identities), context projections get fan-in-scaled weights.
    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        debug_assert_eq!(params.len(), self.param_count());
        params.fill(0.0);
        let dims = self.linear_dims();
        let last = dims.len() - 1;
        let mut off = 0;
        for (i, (ind, outd)) in dims.iter().enumerate() {
            if i != last {
                let std = 1.0 / (*ind as f64).sqrt();
                for w in &mut params[off..off + ind * outd] {
                    *w = std * rng.normal();
                }
            }
            off += ind * outd + outd;
        }
        if self.ctx_dim > 0 {
            let std = 1.0 / (self.ctx_dim as f64).sqrt();
            for w in &mut params[off..] {
                *w = std * rng.normal();
            }
        }
    }

    /// Fill every block (including the output map) with scaled normal draws;
    /// used to build non-trivial random instances in tests and frozen models.
    pub fn randomize(&self, params: &mut [f64], rng: &mut Rng, scale: f64) {
        self.init(params, rng);
        let dims = self.linear_dims();
        let (ind, outd) = dims[dims.len() - 1];
        let off: usize = dims[..dims.len() - 1]
            .iter()
            .map(|(i, o)| i * o + o)
            .sum();
        let std = scale / (ind as f64).sqrt();
        for w in &mut params[off..off + ind * outd + outd] {
            *w = std * rng.normal();
        }
    }

    /// Zero the output linear map (weights and bias), making the network
    /// constant zero regardless of the other blocks.
    pub fn zero_output_stage(&self, params: &mut [f64]) {
        let dims = self.linear_dims();
        let (ind, outd) = dims[dims.len() - 1];
        let off: usize = dims[..dims.len() - 1]
            .iter()
            .map(|(i, o)| i * o + o)
            .sum();
        params[off..off + ind * outd + outd].fill(0.0);
    }

    /// Zero the context projection (no-op for unconditional networks).
    pub fn zero_ctx_projection(&self, params: &mut [f64]) {
        params[self.ctx_offset()..].fill(0.0);
    }

    pub fn check_dims(&self, x: &[f64], ctx: Option<&[f64]>) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::DimMismatch {
                what: "mlp input",
                expected: self.in_dim,
                got: x.len(),
            });
        }
        match (self.ctx_dim, ctx) {
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::DimMismatch {
                what: "mlp context (network is unconditional)",
                expected: 0,
                got: 1,
            }),
            (d, Some(c)) if c.len() == d => Ok(()),
            (d, Some(c)) => Err(Error::DimMismatch {
                what: "mlp context",
                expected: d,
                got: c.len(),
            }),
            (d, None) => Err(Error::DimMismatch {
                what: "mlp context",
                expected: d,
                got: 0,
            }),
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], ctx: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, x, ctx)?.0)
    }

    /// Forward pass that keeps the post-activation of every stage for the
    /// backward pass. `acts[0]` is the input; `acts[i]` for i >= 1 is the
    /// tanh output of hidden stage i.
    pub fn forward_cached(
        &self,
        params: &[f64],
        x: &[f64],
        ctx: Option<&[f64]>,
    ) -> Result<(Vec<f64>, MlpCache)> {
        self.check_dims(x, ctx)?;
        let dims = self.linear_dims();
        let last = dims.len() - 1;
        let ctx_off = self.ctx_offset();
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut off = 0;
        let mut out = Vec::new();
        for (i, (ind, outd)) in dims.iter().enumerate() {
            let w = &params[off..off + ind * outd];
            let b = &params[off + ind * outd..off + ind * outd + outd];
            let mut pre = b.to_vec();
            for (r, &a) in acts[i].iter().enumerate() {
                let row = &w[r * outd..(r + 1) * outd];
                for c in 0..*outd {
                    pre[c] += a * row[c];
                }
            }
            if i == 0 {
                if let Some(c) = ctx {
                    let wc = &params[ctx_off..];
                    for (r, &cv) in c.iter().enumerate() {
                        let row = &wc[r * outd..(r + 1) * outd];
                        for j in 0..*outd {
                            pre[j] += cv * row[j];
                        }
                    }
                }
            }
            if i == last {
                out = pre;
            } else {
                let a: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();
                acts.push(a);
            }
            off += ind * outd + outd;
        }
        Ok((
            out,
            MlpCache {
                acts,
                ctx: ctx.map(|c| c.to_vec()),
            },
        ))
    }

    /// Backward pass. `g_out` is the gradient at the network output;
    /// gradients with respect to the parameters are *accumulated* into
    /// `grad` (same layout as `params`). Returns gradients with respect to
    /// the input and the context (empty when unconditional).
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        g_out: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(grad.len(), self.param_count());
        let dims = self.linear_dims();
        let offsets = self.linear_offsets();
        let mut g_ctx = Vec::new();
        let mut g_pre = g_out.to_vec();
        // Walk the linear stages in reverse. The gradient arriving at stage i
        // is with respect to its pre-activation.
        for i in (0..dims.len()).rev() {
            let (ind, outd) = dims[i];
            let off = offsets[i];
            let a = &cache.acts[i];
            // Accumulate weight/bias gradients.
            for (r, &ar) in a.iter().enumerate() {
                let gw = &mut grad[off + r * outd..off + (r + 1) * outd];
                for c in 0..outd {
                    gw[c] += ar * g_pre[c];
                }
            }
            let gb = &mut grad[off + ind * outd..off + ind * outd + outd];
            for c in 0..outd {
                gb[c] += g_pre[c];
            }
            // Context projection feeds the first pre-activation, so g_pre at
            // stage 0 is also the upstream gradient of the projection.
            if i == 0 {
                if let Some(c) = &cache.ctx {
                    let ctx_off = self.ctx_offset();
                    let wc = &params[ctx_off..];
                    let gwc = &mut grad[ctx_off..];
                    g_ctx = vec![0.0; c.len()];
                    for (r, &cv) in c.iter().enumerate() {
                        let row = &wc[r * outd..(r + 1) * outd];
                        let mut s = 0.0;
                        for j in 0..outd {
                            gwc[r * outd + j] += cv * g_pre[j];
                            s += row[j] * g_pre[j];
                        }
                        g_ctx[r] = s;
                    }
                }
            }
            // Gradient with respect to the stage input.
            let w = &params[off..off + ind * outd];
            let mut g_in = vec![0.0; ind];
            for r in 0..ind {
                let row = &w[r * outd..(r + 1) * outd];
                let mut s = 0.0;
                for c in 0..outd {
                    s += row[c] * g_pre[c];
                }
                g_in[r] = s;
            }
            if i > 0 {
                // Through the tanh of the previous stage: tanh' = 1 - a^2.
                for (gi, &ai) in g_in.iter_mut().zip(cache.acts[i].iter()) {
                    *gi *= 1.0 - ai * ai;
                }
            }
            g_pre = g_in;
        }
        (g_pre, g_ctx)
    }

    fn linear_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::new();
        let mut off = 0;
        for (ind, outd) in self.linear_dims() {
            offs.push(off);
            off += ind * outd + outd;
        }
        offs
    }

    fn ctx_offset(&self) -> usize {
        self.linear_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// acts[0] = input, acts[i] = tanh output of hidden stage i.
    acts: Vec<Vec<f64>>,
    ctx: Option<Vec<f64>>,
}
