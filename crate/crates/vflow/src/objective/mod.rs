//! Training and evaluation objectives.
//!
//! For continuous data the model is trained on the augmented bound
//!
//!   elbo(x) = log p([x || z]) - log q(z | x),  z ~ q(. | x),
//!
//! whose expectation lower-bounds log p(x). Likelihood is evaluated with
//! the importance-sampling estimator
//!
//!   log (1/S) sum_i exp(log p([x || z_i]) - log q(z_i | x)),
//!
//! which recovers the bound at S = 1 and tightens toward log p(x) as S
//! grows. For integer-valued data both are combined with a dequantization
//! flow `r(u | x)` over the unit cube; the discrete bound subtracts
//! `log r(u | x)` and evaluates the model at `x + u`.
//!
//! Backward passes are analytic: the base draws are treated as fixed
//! (reparameterized), so every gradient flows through layer forward passes
//! only.

use crate::error::{Error, Result};
use crate::model::{ChainCache, ParamRegistry, SamplePass, VFlowModel};
use crate::numerics::{logsumexp, Rng};

/// One stochastic evaluation of the augmented bound, with everything the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct ElboPass {
    pub elbo: f64,
    pub log_p: f64,
    pub log_q: f64,
    p_cache: ChainCache,
    q_pass: Option<SamplePass>,
}

/// Draw z ~ q(.|x) and evaluate the bound. Models without augmentation
/// (d_z = 0) degenerate to the exact log-likelihood.
pub fn elbo_sample(model: &VFlowModel, x: &[f64], rng: &mut Rng) -> Result<ElboPass> {
    if x.len() != model.d_x() {
        return Err(Error::DimMismatch {
            what: "data point",
            expected: model.d_x(),
            got: x.len(),
        });
    }
    if model.d_z() == 0 {
        let (log_p, p_cache) = model.p.log_prob_cached(x)?;
        return Ok(ElboPass {
            elbo: log_p,
            log_p,
            log_q: 0.0,
            p_cache,
            q_pass: None,
        });
    }
    let q = model.require_q()?;
    let q_pass = q.sample(x, rng)?;
    let mut joint = x.to_vec();
    joint.extend_from_slice(&q_pass.value);
    let (log_p, p_cache) = model.p.log_prob_cached(&joint)?;
    Ok(ElboPass {
        elbo: log_p - q_pass.log_prob,
        log_p,
        log_q: q_pass.log_prob,
        p_cache,
        q_pass: Some(q_pass),
    })
}

/// Accumulate gradients of `coeff * elbo` into `grad` (registry layout).
/// Returns the gradient with respect to the data point x (both its direct
/// path into p and its conditioning path into q).
pub fn elbo_backward(
    model: &VFlowModel,
    x: &[f64],
    pass: &ElboPass,
    coeff: f64,
    reg: &ParamRegistry,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    let (grad_p, grad_q, _) = reg.split_grad(grad);
    let g_joint = model.p.backward(&pass.p_cache, coeff, grad_p)?;
    let d_x = model.d_x();
    let mut g_x = g_joint[..d_x].to_vec();
    if let Some(q_pass) = &pass.q_pass {
        let q = model.require_q()?;
        // z feeds p (gradient from the joint), and log q enters the bound
        // with a minus sign.
        let (_, g_ctx) = q.backward(q_pass, x, &g_joint[d_x..], -coeff, grad_q)?;
        for (a, b) in g_x.iter_mut().zip(&g_ctx) {
            *a += b;
        }
    }
    Ok(g_x)
}

/// Importance-sampling log-likelihood estimate with `n_samples` draws.
pub fn importance_log_likelihood(
    model: &VFlowModel,
    x: &[f64],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig {
            msg: "importance sampling needs at least one draw".into(),
        });
    }
    if model.d_z() == 0 {
        return model.p.log_prob(x);
    }
    let q = model.require_q()?;
    let mut w = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let q_pass = q.sample(x, rng)?;
        let mut joint = x.to_vec();
        joint.extend_from_slice(&q_pass.value);
        w.push(model.p.log_prob(&joint)? - q_pass.log_prob);
    }
    Ok(logsumexp(&w) - (n_samples as f64).ln())
}

/// Mean importance-sampling log-likelihood over a set of points.
pub fn mean_importance_log_likelihood(
    model: &VFlowModel,
    xs: &[Vec<f64>],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidConfig {
            msg: "evaluation set is empty".into(),
        });
    }
    let mut total = 0.0;
    for x in xs {
        total += importance_log_likelihood(model, x, n_samples, rng)?;
    }
    Ok(total / xs.len() as f64)
}

/// One stochastic evaluation of the discrete-data bound.
#[derive(Debug, Clone)]
pub struct DequantPass {
    /// log p(x+u, z) - log q(z|x+u) - log r(u|x): a bound on log P(x).
    pub bound: f64,
    pub log_p: f64,
    pub log_q: f64,
    pub log_r: f64,
    x_plus_u: Vec<f64>,
    p_cache: ChainCache,
    q_pass: Option<SamplePass>,
    u_pass: SamplePass,
}

/// Draw dequantization noise u ~ r(.|x) and augmentation z ~ q(.|x+u),
/// then evaluate the discrete bound at the integer-valued point x.
pub fn elbo_discrete_sample(model: &VFlowModel, x: &[f64], rng: &mut Rng) -> Result<DequantPass> {
    if x.len() != model.d_x() {
        return Err(Error::DimMismatch {
            what: "data point",
            expected: model.d_x(),
            got: x.len(),
        });
    }
    let r = model.require_r()?;
    let u_pass = r.sample(x, rng)?;
    let x_plus_u: Vec<f64> = x.iter().zip(&u_pass.value).map(|(a, b)| a + b).collect();

    if model.d_z() == 0 {
        let (log_p, p_cache) = model.p.log_prob_cached(&x_plus_u)?;
        return Ok(DequantPass {
            bound: log_p - u_pass.log_prob,
            log_p,
            log_q: 0.0,
            log_r: u_pass.log_prob,
            x_plus_u,
            p_cache,
            q_pass: None,
            u_pass,
        });
    }
    let q = model.require_q()?;
    let q_pass = q.sample(&x_plus_u, rng)?;
    let mut joint = x_plus_u.clone();
    joint.extend_from_slice(&q_pass.value);
    let (log_p, p_cache) = model.p.log_prob_cached(&joint)?;
    Ok(DequantPass {
        bound: log_p - q_pass.log_prob - u_pass.log_prob,
        log_p,
        log_q: q_pass.log_prob,
        log_r: u_pass.log_prob,
        x_plus_u,
        p_cache,
        q_pass: Some(q_pass),
        u_pass,
    })
}

/// Accumulate gradients of `coeff * bound` for a discrete-bound pass.
pub fn elbo_discrete_backward(
    model: &VFlowModel,
    x: &[f64],
    pass: &DequantPass,
    coeff: f64,
    reg: &ParamRegistry,
    grad: &mut [f64],
) -> Result<()> {
    let (grad_p, grad_q, grad_r) = reg.split_grad(grad);
    let g_joint = model.p.backward(&pass.p_cache, coeff, grad_p)?;
    let d_x = model.d_x();
    // Gradient with respect to x+u: its direct path into p, plus (below)
    // its conditioning path into q.
    let mut g_xu = g_joint[..d_x].to_vec();
    if let Some(q_pass) = &pass.q_pass {
        let q = model.require_q()?;
        let (_, g_ctx) = q.backward(q_pass, &pass.x_plus_u, &g_joint[d_x..], -coeff, grad_q)?;
        for (a, b) in g_xu.iter_mut().zip(&g_ctx) {
            *a += b;
        }
    }
    // x is a constant integer point, so the whole x+u gradient lands on u.
    let r = model.require_r()?;
    r.backward(&pass.u_pass, x, &g_xu, -coeff, grad_r)?;
    Ok(())
}

/// Importance-sampling estimate of the discrete log-likelihood log P(x),
/// drawing (u, z) pairs.
pub fn importance_log_likelihood_discrete(
    model: &VFlowModel,
    x: &[f64],
    n_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig {
            msg: "importance sampling needs at least one draw".into(),
        });
    }
    let mut w = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        w.push(elbo_discrete_sample(model, x, rng)?.bound);
    }
    Ok(logsumexp(&w) - (n_samples as f64).ln())
}

/// Convert total nats for one point into bits per dimension:
/// `-nats / (dim * ln 2)`.
pub fn bits_per_dim(total_nats: f64, dim: usize) -> f64 {
    -total_nats / (dim as f64 * std::f64::consts::LN_2)
}
