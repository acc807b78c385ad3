//! Executable verification of the augmentation construction.
//!
//! Any flow over the data space embeds into a flow over the augmented space
//! that acts as the identity on the extra coordinates. With the companion
//! posterior reset to the base distribution, the augmented model's bound and
//! importance-sampling estimates coincide with the original flow's exact
//! log-likelihood — draw by draw, not just in expectation. The functions
//! here build that embedding for real layer chains and measure how closely
//! the identities hold in floating point (they should be at the level of
//! summation round-off, many orders below any training signal).

use crate::error::{Error, Result};
use crate::layers::{ActNorm, AffineCoupling, Layer, MlpSpec, PointwiseLinear};
use crate::model::{ConditionalFlow, Flow, LayerStack, VFlowModel};
use crate::numerics::{log_normal_pdf, quadrature_1d, Rng};
use crate::objective::{elbo_sample, importance_log_likelihood};

/// Copy network parameters into a network whose first stage gained extra
/// inputs and whose last stage gained extra outputs, leaving the new slots
/// zero. `dst` must already be zeroed.
fn embed_mlp_params(src_spec: &MlpSpec, src: &[f64], dst_spec: &MlpSpec, dst: &mut [f64]) {
    let sd = src_spec.linear_dims();
    let dd = dst_spec.linear_dims();
    debug_assert_eq!(sd.len(), dd.len());
    let mut s_off = 0;
    let mut d_off = 0;
    for ((s_in, s_out), (d_in, d_out)) in sd.iter().zip(&dd) {
        for r in 0..*s_in {
            for c in 0..*s_out {
                dst[d_off + r * d_out + c] = src[s_off + r * s_out + c];
            }
        }
        for c in 0..*s_out {
            dst[d_off + d_in * d_out + c] = src[s_off + s_in * s_out + c];
        }
        s_off += s_in * s_out + s_out;
        d_off += d_in * d_out + d_out;
    }
}

/// Pad an affine coupling so it acts as the identity on `extra` appended
/// coordinates: the mask pattern continues over them, the network ignores
/// the new pass-through inputs, and the new transformed outputs get zero
/// shift and zero log-scale.
fn embed_coupling(c: &AffineCoupling, extra: usize) -> Result<AffineCoupling> {
    let spec = c.net_spec();
    if spec.ctx_dim != 0 {
        return Err(Error::UnsupportedLayer {
            op: "identity embedding",
            kind: "conditional affine_coupling",
        });
    }
    let mask2 = c.mask().extended(extra);
    // The throwaway seed only feeds the constructor's initialization; every
    // parameter is overwritten below.
    let mut rng = Rng::from_seed(0);
    let mut c2 = AffineCoupling::new(
        mask2,
        spec.hidden_units,
        spec.hidden_layers,
        0,
        c.s_clamp(),
        &mut rng,
    );
    let n_src = spec.param_count();
    let n_dst = c2.net_spec().param_count();
    let dst_spec = c2.net_spec().clone();
    let params = c2.params_mut();
    params.fill(0.0);
    let (mu_dst, s_dst) = params.split_at_mut(n_dst);
    embed_mlp_params(spec, &c.params()[..n_src], &dst_spec, mu_dst);
    embed_mlp_params(spec, &c.params()[n_src..], &dst_spec, s_dst);
    Ok(c2)
}

/// Embed a data-space flow into the augmented space: every layer is padded
/// to act as the identity on `extra` appended coordinates, so
/// `log p_a([x || z]) = log p_x(x) + log N(z)` exactly.
pub fn embed_flow(p_x: &Flow, extra: usize) -> Result<Flow> {
    if extra == 0 {
        return Ok(p_x.clone());
    }
    let d_x = p_x.dim();
    let dim = d_x + extra;
    let mut layers = Vec::with_capacity(p_x.stack().layers().len());
    for (i, l) in p_x.stack().layers().iter().enumerate() {
        let embedded = match l {
            Layer::ActNorm(a) => {
                let mut ls = a.log_scale().to_vec();
                let mut b = a.bias().to_vec();
                ls.resize(dim, 0.0);
                b.resize(dim, 0.0);
                Layer::ActNorm(ActNorm::with_params(ls, b).map_err(|e| e.at_layer(i))?)
            }
            Layer::PointwiseLinear(p) => {
                let w = p.params();
                let mut w2 = vec![0.0; dim * dim];
                for r in 0..d_x {
                    w2[r * dim..r * dim + d_x].copy_from_slice(&w[r * d_x..(r + 1) * d_x]);
                }
                for r in d_x..dim {
                    w2[r * dim + r] = 1.0;
                }
                Layer::PointwiseLinear(
                    PointwiseLinear::from_matrix(w2, dim).map_err(|e| e.at_layer(i))?,
                )
            }
            Layer::TupleFlip(t) => Layer::TupleFlip(t.extended(extra)),
            Layer::AffineCoupling(c) => {
                Layer::AffineCoupling(embed_coupling(c, extra).map_err(|e| e.at_layer(i))?)
            }
            other => {
                return Err(Error::UnsupportedLayer {
                    op: "identity embedding",
                    kind: other.kind_name(),
                }
                .at_layer(i))
            }
        };
        layers.push(embedded);
    }
    Ok(Flow::new(LayerStack::new(dim, layers)?))
}

/// Reset a conditional flow to the exact identity: its samples are the base
/// draws themselves and its log-density is the standard-normal one,
/// regardless of the context. The architecture (and parameter count) is
/// preserved, so gradients still flow.
pub fn trivial_q(q: &ConditionalFlow) -> Result<ConditionalFlow> {
    let mut t = q.clone();
    for (i, l) in t.stack_mut().layers_mut().iter_mut().enumerate() {
        match l {
            Layer::ActNorm(a) => a.params_mut().fill(0.0),
            Layer::PointwiseLinear(p) => {
                *p = PointwiseLinear::identity(p.dim());
            }
            Layer::TupleFlip(_) => {}
            Layer::AffineCoupling(c) => {
                let spec = c.net_spec().clone();
                let n = spec.param_count();
                let (mu, s) = c.params_mut().split_at_mut(n);
                spec.zero_output_stage(mu);
                spec.zero_ctx_projection(mu);
                spec.zero_output_stage(s);
                spec.zero_ctx_projection(s);
            }
            Layer::GaussianConditional(g) => {
                let spec = g.net_spec().clone();
                let n = spec.param_count();
                let (mu, ls) = g.params_mut().split_at_mut(n);
                spec.zero_output_stage(mu);
                spec.zero_ctx_projection(mu);
                spec.zero_output_stage(ls);
                spec.zero_ctx_projection(ls);
            }
            other => {
                return Err(Error::UnsupportedLayer {
                    op: "trivialization",
                    kind: other.kind_name(),
                }
                .at_layer(i))
            }
        }
    }
    Ok(t)
}

/// Measured discrepancies from one embedding check. All gaps should sit at
/// floating-point round-off (far below 1e-9).
#[derive(Debug, Clone)]
pub struct EmbeddingReport {
    pub n_points: usize,
    /// max |log p_a([x||z]) - log p_x(x) - log N(z)| over points and draws.
    pub max_joint_gap: f64,
    /// max |elbo(x) - log p_x(x)| over points.
    pub max_elbo_gap: f64,
    /// max |IS_S(x) - log p_x(x)| over points and sample counts.
    pub max_is_gap: f64,
    pub base_param_count: usize,
    pub embedded_param_count: usize,
}

/// Build the identity embedding of `p_x` (with `q_template` trivialized as
/// the posterior) and measure how exactly the augmented model reproduces
/// the original likelihood on `xs`.
pub fn verify_embedding(
    p_x: &Flow,
    q_template: &ConditionalFlow,
    xs: &[Vec<f64>],
    is_sample_counts: &[usize],
    rng: &mut Rng,
) -> Result<EmbeddingReport> {
    let d_x = p_x.dim();
    let d_z = q_template.dim();
    if q_template.ctx_dim() != d_x {
        return Err(Error::DimMismatch {
            what: "posterior context",
            expected: d_x,
            got: q_template.ctx_dim(),
        });
    }
    let p_a = embed_flow(p_x, d_z)?;
    let q = trivial_q(q_template)?;
    let model = VFlowModel::new(d_x, d_z, p_a, Some(q), None)?;

    let mut max_joint = 0.0f64;
    let mut max_elbo = 0.0f64;
    let mut max_is = 0.0f64;
    for x in xs {
        let log_px = p_x.log_prob(x)?;

        let z = rng.normal_vec(d_z);
        let mut joint = x.clone();
        joint.extend_from_slice(&z);
        let gap = (model.p.log_prob(&joint)? - log_px - log_normal_pdf(&z)).abs();
        max_joint = max_joint.max(gap);

        let pass = elbo_sample(&model, x, rng)?;
        max_elbo = max_elbo.max((pass.elbo - log_px).abs());

        for &s in is_sample_counts {
            let is = importance_log_likelihood(&model, x, s, rng)?;
            max_is = max_is.max((is - log_px).abs());
        }
    }
    Ok(EmbeddingReport {
        n_points: xs.len(),
        max_joint_gap: max_joint,
        max_elbo_gap: max_elbo,
        max_is_gap: max_is,
        base_param_count: p_x.param_count(),
        embedded_param_count: model.p.param_count(),
    })
}

/// Marginal log-likelihood by quadrature over a single augmentation
/// coordinate: `log ∫ p([x || z]) dz` on `[z_lo, z_hi]` with a Simpson rule
/// (`nodes` rounded up to odd). Only valid when d_z = 1.
pub fn marginal_log_prob_quadrature(
    model: &VFlowModel,
    x: &[f64],
    z_lo: f64,
    z_hi: f64,
    nodes: usize,
) -> Result<f64> {
    if model.d_z() != 1 {
        return Err(Error::DimMismatch {
            what: "quadrature augmentation dimension",
            expected: 1,
            got: model.d_z(),
        });
    }
    if x.len() != model.d_x() {
        return Err(Error::DimMismatch {
            what: "data point",
            expected: model.d_x(),
            got: x.len(),
        });
    }
    let n = if nodes < 3 {
        3
    } else if nodes % 2 == 0 {
        nodes + 1
    } else {
        nodes
    };
    let h = (z_hi - z_lo) / (n - 1) as f64;
    let mut joint = x.to_vec();
    joint.push(0.0);
    let mut lps = Vec::with_capacity(n);
    for i in 0..n {
        *joint.last_mut().unwrap() = z_lo + i as f64 * h;
        lps.push(model.p.log_prob(&joint)?);
    }
    // Integrate exp(lp - m) for stability; the quadrature nodes are exactly
    // the grid above, so the closure just looks the values up.
    let m = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let integral = quadrature_1d(
        |z| {
            let i = ((z - z_lo) / h).round() as usize;
            (lps[i] - m).exp()
        },
        z_lo,
        z_hi,
        n,
    );
    Ok(m + integral.ln())
}
