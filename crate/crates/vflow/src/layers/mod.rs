//! Invertible layers.
//!
//! Every layer maps a vector to a vector of the same dimension, reports the
//! log-determinant of its Jacobian, can be inverted exactly, and implements
//! an analytic backward pass for `c1 * <g, y> + c2 * logdet`-shaped losses:
//! given the output gradient `g` and the logdet coefficient, `backward`
//! accumulates parameter gradients into a flat slice and returns the
//! gradients with respect to the input (and the conditioning context, when
//! the layer takes one).
//!
//! Layers own their parameters as a single flat `Vec<f64>`; `param_entries`
//! names the pieces so a model-level registry can address them.

pub mod actnorm;
pub mod affine;
pub mod gaussian;
pub mod mask;
pub mod mixaffine;
pub mod mixlog;
pub mod mlp;
pub mod pointwise;
pub mod simple;

pub use actnorm::ActNorm;
pub use affine::{AffineCoupling, S_CLAMP_BOUND};
pub use gaussian::GaussianConditional;
pub use mask::{MaskKind, SplitMask};
pub use mixaffine::MixAffine;
pub use mixlog::{logit_stage_bound, mix_log_cdf, MixLogisticCoupling};
pub use mlp::MlpSpec;
pub use pointwise::PointwiseLinear;
pub use simple::{Sigmoid, TupleFlip};

use crate::error::Result;
use crate::numerics::Rng;

/// Any invertible layer, behind one dispatch surface so flows can hold
/// heterogeneous chains.
#[derive(Debug, Clone)]
pub enum Layer {
    ActNorm(ActNorm),
    AffineCoupling(AffineCoupling),
    MixLogistic(MixLogisticCoupling),
    PointwiseLinear(PointwiseLinear),
    Sigmoid(Sigmoid),
    TupleFlip(TupleFlip),
    GaussianConditional(GaussianConditional),
    MixAffine(MixAffine),
}

impl Layer {
    pub fn dim(&self) -> usize {
        match self {
            Layer::ActNorm(l) => l.dim(),
            Layer::AffineCoupling(l) => l.dim(),
            Layer::MixLogistic(l) => l.dim(),
            Layer::PointwiseLinear(l) => l.dim(),
            Layer::Sigmoid(l) => l.dim(),
            Layer::TupleFlip(l) => l.dim(),
            Layer::GaussianConditional(l) => l.dim(),
            Layer::MixAffine(l) => l.dim(),
        }
    }

    /// Dimension of the conditioning context the layer consumes (0 if none).
    pub fn context_dim(&self) -> usize {
        match self {
            Layer::AffineCoupling(l) => l.context_dim(),
            Layer::MixLogistic(l) => l.context_dim(),
            Layer::GaussianConditional(l) => l.context_dim(),
            _ => 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::AffineCoupling(_) => "affine_coupling",
            Layer::MixLogistic(_) => "mix_logistic",
            Layer::PointwiseLinear(_) => "pointwise_linear",
            Layer::Sigmoid(_) => "sigmoid",
            Layer::TupleFlip(_) => "tuple_flip",
            Layer::GaussianConditional(_) => "gaussian_conditional",
            Layer::MixAffine(_) => "mix_affine",
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Layer::ActNorm(l) => l.params(),
            Layer::AffineCoupling(l) => l.params(),
            Layer::MixLogistic(l) => l.params(),
            Layer::PointwiseLinear(l) => l.params(),
            Layer::Sigmoid(_) | Layer::TupleFlip(_) => &[],
            Layer::GaussianConditional(l) => l.params(),
            Layer::MixAffine(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::ActNorm(l) => l.params_mut(),
            Layer::AffineCoupling(l) => l.params_mut(),
            Layer::MixLogistic(l) => l.params_mut(),
            Layer::PointwiseLinear(l) => l.params_mut(),
            Layer::Sigmoid(_) | Layer::TupleFlip(_) => &mut [],
            Layer::GaussianConditional(l) => l.params_mut(),
            Layer::MixAffine(l) => l.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Named pieces of the flat parameter vector, in storage order.
    pub fn param_entries(&self) -> Vec<(String, Vec<usize>)> {
        fn prefixed(prefix: &str, entries: Vec<(String, Vec<usize>)>) -> Vec<(String, Vec<usize>)> {
            entries
                .into_iter()
                .map(|(n, s)| (format!("{prefix}.{n}"), s))
                .collect()
        }
        match self {
            Layer::ActNorm(l) => vec![
                ("log_scale".into(), vec![l.dim()]),
                ("bias".into(), vec![l.dim()]),
            ],
            Layer::PointwiseLinear(l) => vec![("weight".into(), vec![l.dim(), l.dim()])],
            Layer::AffineCoupling(l) => {
                let mut v = prefixed("mu", l.net_spec().entries());
                v.extend(prefixed("s", l.net_spec().entries()));
                v
            }
            Layer::MixLogistic(l) => prefixed("net", l.net_spec().entries()),
            Layer::GaussianConditional(l) => {
                let mut v = prefixed("mu", l.net_spec().entries());
                v.extend(prefixed("log_sigma", l.net_spec().entries()));
                v
            }
            Layer::MixAffine(l) => {
                let mut v = prefixed("mu", l.net_spec().entries());
                v.extend(prefixed("s", l.net_spec().entries()));
                v
            }
            Layer::Sigmoid(_) | Layer::TupleFlip(_) => Vec::new(),
        }
    }

    /// Perturb parameters for tests; identity-initialized layers stay usable.
    pub fn randomize(&mut self, rng: &mut Rng, scale: f64) {
        match self {
            Layer::ActNorm(l) => l.randomize(rng, scale),
            Layer::AffineCoupling(l) => l.randomize(rng, scale),
            Layer::MixLogistic(l) => l.randomize(rng, scale),
            Layer::PointwiseLinear(l) => l.randomize(rng, scale),
            Layer::Sigmoid(_) | Layer::TupleFlip(_) => {}
            Layer::GaussianConditional(l) => l.randomize(rng, scale),
            Layer::MixAffine(l) => l.randomize(rng, scale),
        }
    }

    /// Context actually consumed: layers that take no context ignore what the
    /// chain hands them, so unconditioned layers compose freely inside
    /// conditional flows.
    fn used_ctx<'a>(&self, ctx: Option<&'a [f64]>) -> Option<&'a [f64]> {
        if self.context_dim() > 0 {
            ctx
        } else {
            None
        }
    }

    pub fn forward(&self, x: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let c = self.used_ctx(ctx);
        match self {
            Layer::ActNorm(l) => l.forward(x),
            Layer::AffineCoupling(l) => l.forward(x, c),
            Layer::MixLogistic(l) => l.forward(x, c),
            Layer::PointwiseLinear(l) => l.forward(x),
            Layer::Sigmoid(l) => l.forward(x),
            Layer::TupleFlip(l) => l.forward(x),
            Layer::GaussianConditional(l) => l.forward(x, c),
            Layer::MixAffine(l) => l.forward(x),
        }
    }

    pub fn inverse(&self, y: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let c = self.used_ctx(ctx);
        match self {
            Layer::ActNorm(l) => l.inverse(y),
            Layer::AffineCoupling(l) => l.inverse(y, c),
            Layer::MixLogistic(l) => l.inverse(y, c),
            Layer::PointwiseLinear(l) => l.inverse(y),
            Layer::Sigmoid(l) => l.inverse(y),
            Layer::TupleFlip(l) => l.inverse(y),
            Layer::GaussianConditional(l) => l.inverse(y, c),
            Layer::MixAffine(l) => l.inverse(y),
        }
    }

    /// Backward pass of `<g, forward(x)> + g_logdet * logdet(x)`.
    ///
    /// Parameter gradients accumulate into `grad` (length `param_count`).
    /// Returns the input gradient and the context gradient; the latter has
    /// the length of `ctx` (zeros when the layer ignores context) so callers
    /// can accumulate uniformly.
    pub fn backward(
        &self,
        x: &[f64],
        ctx: Option<&[f64]>,
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = self.used_ctx(ctx);
        let zero_ctx = || vec![0.0; ctx.map_or(0, <[f64]>::len)];
        match self {
            Layer::ActNorm(l) => Ok((l.backward(x, g, g_logdet, grad)?, zero_ctx())),
            Layer::AffineCoupling(l) => {
                let (gi, gc) = l.backward(x, c, g, g_logdet, grad)?;
                Ok((gi, if c.is_some() { gc } else { zero_ctx() }))
            }
            Layer::MixLogistic(l) => {
                let (gi, gc) = l.backward(x, c, g, g_logdet, grad)?;
                Ok((gi, if c.is_some() { gc } else { zero_ctx() }))
            }
            Layer::PointwiseLinear(l) => Ok((l.backward(x, g, g_logdet, grad)?, zero_ctx())),
            Layer::Sigmoid(l) => Ok((l.backward(x, g, g_logdet)?, zero_ctx())),
            Layer::TupleFlip(l) => Ok((l.backward(g)?, zero_ctx())),
            Layer::GaussianConditional(l) => l.backward(x, c, g, g_logdet, grad),
            Layer::MixAffine(l) => Ok((l.backward(x, g, g_logdet, grad)?, zero_ctx())),
        }
    }
}
