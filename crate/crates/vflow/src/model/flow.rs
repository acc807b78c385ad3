//! Flows over a standard-normal base, and the joint model that combines a
//! density flow with its variational companions.

use crate::error::{Error, Result};
use crate::numerics::{log_normal_pdf, Rng};

use super::stack::{ChainCache, LayerStack};

/// Unconditional normalizing flow. The stored chain maps *data to base*:
/// `log_prob(x) = log N(chain(x)) + logdet(x)`. Sampling draws a base point
/// and runs the chain backwards.
#[derive(Debug, Clone)]
pub struct Flow {
    stack: LayerStack,
}

impl Flow {
    pub fn new(stack: LayerStack) -> Self {
        Flow { stack }
    }

    pub fn dim(&self) -> usize {
        self.stack.dim()
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn stack_mut(&mut self) -> &mut LayerStack {
        &mut self.stack
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (eps, ld) = self.stack.forward(x, None)?;
        Ok(log_normal_pdf(&eps) + ld)
    }

    /// `log_prob` that keeps the per-layer inputs so `backward` can run.
    pub fn log_prob_cached(&self, x: &[f64]) -> Result<(f64, ChainCache)> {
        let (eps, ld, cache) = self.stack.forward_cached(x, None)?;
        Ok((log_normal_pdf(&eps) + ld, cache))
    }

    /// Backward pass of `coeff * log_prob(x)` for the cached evaluation.
    /// Parameter gradients accumulate into `grad`; returns the gradient
    /// with respect to `x`.
    pub fn backward(&self, cache: &ChainCache, coeff: f64, grad: &mut [f64]) -> Result<Vec<f64>> {
        // d log N(eps) / d eps = -eps, and every layer logdet enters with
        // coefficient `coeff`.
        let g_out: Vec<f64> = cache.output().iter().map(|e| -coeff * e).collect();
        let (g_x, _) = self.stack.backward(cache, None, &g_out, coeff, grad)?;
        Ok(g_x)
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        let eps = rng.normal_vec(self.dim());
        let (x, _) = self.stack.inverse(&eps, None)?;
        Ok(x)
    }
}

/// Conditional flow, stored in the *sampling* direction: the chain maps a
/// base draw to a value, given a context. Its density is evaluated by
/// running the chain backwards.
#[derive(Debug, Clone)]
pub struct ConditionalFlow {
    stack: LayerStack,
    ctx_dim: usize,
}

/// What `ConditionalFlow::sample` keeps so the pass can be differentiated.
#[derive(Debug, Clone)]
pub struct SamplePass {
    pub value: Vec<f64>,
    pub log_prob: f64,
    cache: ChainCache,
}

impl ConditionalFlow {
    pub fn new(stack: LayerStack, ctx_dim: usize) -> Result<Self> {
        for (i, l) in stack.layers().iter().enumerate() {
            let c = l.context_dim();
            if c != 0 && c != ctx_dim {
                return Err(Error::DimMismatch {
                    what: "conditional flow context",
                    expected: ctx_dim,
                    got: c,
                }
                .at_layer(i));
            }
        }
        Ok(ConditionalFlow { stack, ctx_dim })
    }

    pub fn dim(&self) -> usize {
        self.stack.dim()
    }

    pub fn ctx_dim(&self) -> usize {
        self.ctx_dim
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn stack_mut(&mut self) -> &mut LayerStack {
        &mut self.stack
    }

    pub fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    fn check_ctx(&self, ctx: &[f64]) -> Result<()> {
        if ctx.len() != self.ctx_dim {
            return Err(Error::DimMismatch {
                what: "conditional flow context",
                expected: self.ctx_dim,
                got: ctx.len(),
            });
        }
        Ok(())
    }

    /// Draw a value and return its exact log-density under the flow, along
    /// with everything `backward` needs. The density uses the change of
    /// variables along the sampling chain itself:
    /// `log_prob = log N(eps) - logdet_chain(eps)`.
    pub fn sample(&self, ctx: &[f64], rng: &mut Rng) -> Result<SamplePass> {
        self.check_ctx(ctx)?;
        let eps = rng.normal_vec(self.dim());
        let lp_base = log_normal_pdf(&eps);
        let (value, ld, cache) = self.stack.forward_cached(&eps, Some(ctx))?;
        Ok(SamplePass {
            value,
            log_prob: lp_base - ld,
            cache,
        })
    }

    /// Log-density of an arbitrary value (inverse-chain evaluation).
    pub fn log_prob_given(&self, value: &[f64], ctx: &[f64]) -> Result<f64> {
        self.check_ctx(ctx)?;
        let (eps, ld_inv) = self.stack.inverse(value, Some(ctx))?;
        Ok(log_normal_pdf(&eps) + ld_inv)
    }

    /// Backward pass of `<g_value, value> + g_logprob * log_prob` for a
    /// sampling pass, treating the base draw as fixed (reparameterized).
    ///
    /// Parameter gradients accumulate into `grad`. Returns the gradients
    /// with respect to the base draw and the context.
    pub fn backward(
        &self,
        pass: &SamplePass,
        ctx: &[f64],
        g_value: &[f64],
        g_logprob: f64,
        grad: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_ctx(ctx)?;
        // log_prob = log N(eps) - logdet, so each layer's logdet carries
        // coefficient -g_logprob.
        let (mut g_eps, g_ctx) =
            self.stack
                .backward(&pass.cache, Some(ctx), g_value, -g_logprob, grad)?;
        for (ge, e) in g_eps.iter_mut().zip(pass.cache.input()) {
            *ge -= g_logprob * e;
        }
        Ok((g_eps, g_ctx))
    }
}

/// Density flow over the augmented space `[x || z]` plus the variational
/// pieces: `q(z | context)` for the augmentation posterior and, for integer
/// data, `r(u | x)` for dequantization noise.
#[derive(Debug, Clone)]
pub struct VFlowModel {
    d_x: usize,
    d_z: usize,
    pub p: Flow,
    pub q: Option<ConditionalFlow>,
    pub r: Option<ConditionalFlow>,
}

impl VFlowModel {
    pub fn new(
        d_x: usize,
        d_z: usize,
        p: Flow,
        q: Option<ConditionalFlow>,
        r: Option<ConditionalFlow>,
    ) -> Result<Self> {
        if p.dim() != d_x + d_z {
            return Err(Error::DimMismatch {
                what: "density flow dimension",
                expected: d_x + d_z,
                got: p.dim(),
            });
        }
        if let Some(q) = &q {
            if q.dim() != d_z {
                return Err(Error::DimMismatch {
                    what: "augmentation flow dimension",
                    expected: d_z,
                    got: q.dim(),
                });
            }
            if q.ctx_dim() != d_x {
                return Err(Error::DimMismatch {
                    what: "augmentation flow context",
                    expected: d_x,
                    got: q.ctx_dim(),
                });
            }
        } else if d_z > 0 {
            return Err(Error::MissingComponent {
                what: "augmentation flow (d_z > 0)",
            });
        }
        if let Some(r) = &r {
            if r.dim() != d_x {
                return Err(Error::DimMismatch {
                    what: "dequantization flow dimension",
                    expected: d_x,
                    got: r.dim(),
                });
            }
            if r.ctx_dim() != d_x {
                return Err(Error::DimMismatch {
                    what: "dequantization flow context",
                    expected: d_x,
                    got: r.ctx_dim(),
                });
            }
        }
        Ok(VFlowModel { d_x, d_z, p, q, r })
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    /// Dimension of the augmented space the density flow runs over.
    pub fn dim(&self) -> usize {
        self.d_x + self.d_z
    }

    pub fn require_q(&self) -> Result<&ConditionalFlow> {
        self.q.as_ref().ok_or(Error::MissingComponent {
            what: "augmentation flow",
        })
    }

    pub fn require_r(&self) -> Result<&ConditionalFlow> {
        self.r.as_ref().ok_or(Error::MissingComponent {
            what: "dequantization flow",
        })
    }

    /// Joint sample `[x || z]` from the density flow; callers usually keep
    /// only the first `d_x` coordinates.
    pub fn sample_joint(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        self.p.sample(rng)
    }
}
