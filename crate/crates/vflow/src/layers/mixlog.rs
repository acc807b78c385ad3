//! Mixture-of-logistics CDF coupling.
//!
//! Each transformed coordinate x is pushed through the CDF of a K-component
//! logistic mixture whose parameters come from a network of the pass-through
//! half, then rescaled into (0.05, 0.95), mapped back through the logit, and
//! affinely transformed:
//!
//!   p = sum_i pi_i * sigma((x - mu_i) * exp(-s_i))
//!   t = 0.05 + 0.9 * p
//!   y = logit(t) * exp(a) + b
//!
//! The (0.05, 0.95) squeeze bounds the logit-stage derivative by
//! 1/(0.05 * 0.95), which is what keeps the log-determinant (and its
//! gradients) from exploding when p saturates. The inverse has no closed
//! form in x and is found by bisection (the mixture CDF is strictly
//! increasing).
//!
//! Network output layout per transformed coordinate: K mixture logits,
//! K locations, K log-scales, then the affine log-scale a and shift b
//! (stride 3K + 2).

use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, logit, logsumexp, sigmoid, Rng};

use super::mask::SplitMask;
use super::mlp::MlpSpec;

/// Lower edge of the CDF squeeze interval.
pub const SQUEEZE_LO: f64 = 0.05;
/// Width of the squeeze interval (upper edge = 0.95).
pub const SQUEEZE_SPAN: f64 = 0.9;

/// Largest possible log-derivative of the logit stage,
/// ln(1 / (0.05 * 0.95)).
pub fn logit_stage_bound() -> f64 {
    -(SQUEEZE_LO * (1.0 - SQUEEZE_LO)).ln()
}

/// CDF of a logistic mixture: sum_i exp(log_pi_i) * sigma((x-mu_i)e^{-s_i}).
/// `log_pis` must be normalized log-weights.
pub fn mix_log_cdf(x: f64, log_pis: &[f64], mus: &[f64], log_scales: &[f64]) -> f64 {
    let mut p = 0.0;
    for i in 0..log_pis.len() {
        let u = (x - mus[i]) * (-log_scales[i]).exp();
        p += log_pis[i].exp() * sigmoid(u);
    }
    p
}

#[derive(Debug, Clone)]
pub struct MixLogisticCoupling {
    mask: SplitMask,
    components: usize,
    net: MlpSpec,
    params: Vec<f64>,
}

/// Per-coordinate slices of the network output.
struct CoordParams<'a> {
    logits: &'a [f64],
    mus: &'a [f64],
    ss: &'a [f64],
    a: f64,
    b: f64,
}

fn coord_params(out: &[f64], j: usize, k: usize) -> CoordParams<'_> {
    let stride = 3 * k + 2;
    let s = &out[j * stride..(j + 1) * stride];
    CoordParams {
        logits: &s[..k],
        mus: &s[k..2 * k],
        ss: &s[2 * k..3 * k],
        a: s[3 * k],
        b: s[3 * k + 1],
    }
}

impl MixLogisticCoupling {
    pub fn new(
        mask: SplitMask,
        components: usize,
        hidden_units: usize,
        hidden_layers: usize,
        ctx_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::InvalidConfig {
                msg: "mixture needs at least one component".into(),
            });
        }
        let net = MlpSpec {
            in_dim: mask.n_pass(),
            hidden_units,
            hidden_layers,
            out_dim: mask.n_trans() * (3 * components + 2),
            ctx_dim,
        };
        let mut params = vec![0.0; net.param_count()];
        net.init(&mut params, rng);
        Ok(MixLogisticCoupling {
            mask,
            components,
            net,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn context_dim(&self) -> usize {
        self.net.ctx_dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn mask(&self) -> &SplitMask {
        &self.mask
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
        self.net.randomize(&mut self.params, rng, scale);
    }

    /// y and logdet for one coordinate given its mixture parameters.
    fn coord_forward(x: f64, cp: &CoordParams<'_>) -> (f64, f64) {
        let k = cp.logits.len();
        let lse = logsumexp(cp.logits);
        let mut p = 0.0;
        let mut logd_terms = Vec::with_capacity(k);
        for i in 0..k {
            let lp = cp.logits[i] - lse;
            let u = (x - cp.mus[i]) * (-cp.ss[i]).exp();
            p += lp.exp() * sigmoid(u);
            // log of pi_i * sigma'(u_i) * e^{-s_i}.
            logd_terms.push(lp + log_sigmoid(u) + log_sigmoid(-u) - cp.ss[i]);
        }
        let t = SQUEEZE_LO + SQUEEZE_SPAN * p;
        let y = logit(t) * cp.a.exp() + cp.b;
        let ld = cp.a + SQUEEZE_SPAN.ln() - t.ln() - (1.0 - t).ln() + logsumexp(&logd_terms);
        (y, ld)
    }

    pub fn forward(&self, x: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let x1 = self.mask.gather_pass(x);
        let x2 = self.mask.gather_trans(x);
        let out = self.net.forward(&self.params, &x1, ctx)?;
        let mut ld = 0.0;
        let mut y2 = Vec::with_capacity(x2.len());
        for (j, &xj) in x2.iter().enumerate() {
            let cp = coord_params(&out, j, self.components);
            let (y, l) = Self::coord_forward(xj, &cp);
            y2.push(y);
            ld += l;
        }
        Ok((self.mask.scatter(&x1, &y2), ld))
    }

    /// Log-derivative of the logit stage, -ln t - ln(1-t), per transformed
    /// coordinate. Bounded above by `logit_stage_bound()` by construction;
    /// exposed so that bound can be audited directly.
    pub fn logit_stage_log_derivs(&self, x: &[f64], ctx: Option<&[f64]>) -> Result<Vec<f64>> {
        let x1 = self.mask.gather_pass(x);
        let x2 = self.mask.gather_trans(x);
        let out = self.net.forward(&self.params, &x1, ctx)?;
        let mut v = Vec::with_capacity(x2.len());
        for (j, &xj) in x2.iter().enumerate() {
            let cp = coord_params(&out, j, self.components);
            let lse = logsumexp(cp.logits);
            let lps: Vec<f64> = cp.logits.iter().map(|l| l - lse).collect();
            let p = mix_log_cdf(xj, &lps, cp.mus, cp.ss);
            let t = SQUEEZE_LO + SQUEEZE_SPAN * p;
            v.push(-t.ln() - (1.0 - t).ln());
        }
        Ok(v)
    }

    pub fn inverse(&self, y: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let y1 = self.mask.gather_pass(y);
        let y2 = self.mask.gather_trans(y);
        let out = self.net.forward(&self.params, &y1, ctx)?;
        let mut ld = 0.0;
        let mut x2 = Vec::with_capacity(y2.len());
        for (j, &yj) in y2.iter().enumerate() {
            let cp = coord_params(&out, j, self.components);
            let xj = Self::coord_invert(yj, &cp, self.mask.trans_indices()[j])?;
            let (_, l) = Self::coord_forward(xj, &cp);
            ld -= l;
            x2.push(xj);
        }
        Ok((self.mask.scatter(&y1, &x2), ld))
    }

    fn coord_invert(y: f64, cp: &CoordParams<'_>, coord: usize) -> Result<f64> {
        let k = cp.logits.len();
        let g = (y - cp.b) * (-cp.a).exp();
        let t = sigmoid(g);
        let p = (t - SQUEEZE_LO) / SQUEEZE_SPAN;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::OutOfImage {
                layer: "mixture-of-logistics coupling",
                coord,
                value: y,
            });
        }
        let lse = logsumexp(cp.logits);
        let lps: Vec<f64> = cp.logits.iter().map(|l| l - lse).collect();
        let cdf = |x: f64| mix_log_cdf(x, &lps, cp.mus, cp.ss);

        // Initial bracket: mixture locations padded by 20 max scales, then
        // widened geometrically until it straddles p.
        let mu_min = cp.mus.iter().copied().fold(f64::INFINITY, f64::min);
        let mu_max = cp.mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let smax = cp.ss[..k]
            .iter()
            .map(|s| s.exp())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut lo = mu_min - 20.0 * smax;
        let mut hi = mu_max + 20.0 * smax;
        let mut step = (hi - lo).max(1.0);
        for _ in 0..120 {
            if cdf(lo) < p {
                break;
            }
            lo -= step;
            step *= 2.0;
        }
        step = (hi - lo).max(1.0);
        for _ in 0..120 {
            if cdf(hi) > p {
                break;
            }
            hi += step;
            step *= 2.0;
        }

        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-12 * (1.0 + mid.abs()) || mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        Err(Error::BisectionFailed {
            residual: (cdf(mid) - p).abs(),
        })
    }

    pub fn backward(
        &self,
        x: &[f64],
        ctx: Option<&[f64]>,
        g: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.components;
        let x1 = self.mask.gather_pass(x);
        let x2 = self.mask.gather_trans(x);
        let g1 = self.mask.gather_pass(g);
        let g2 = self.mask.gather_trans(g);
        let (out, cache) = self.net.forward_cached(&self.params, &x1, ctx)?;

        let mut g_out = vec![0.0; out.len()];
        let mut g_x2 = vec![0.0; x2.len()];
        let stride = 3 * k + 2;
        for (j, &xj) in x2.iter().enumerate() {
            let cp = coord_params(&out, j, k);
            let gy = g2[j];

            let lse = logsumexp(cp.logits);
            let lps: Vec<f64> = cp.logits.iter().map(|l| l - lse).collect();
            let us: Vec<f64> = (0..k)
                .map(|i| (xj - cp.mus[i]) * (-cp.ss[i]).exp())
                .collect();
            let sigs: Vec<f64> = us.iter().map(|&u| sigmoid(u)).collect();
            let log_sig_primes: Vec<f64> =
                us.iter().map(|&u| log_sigmoid(u) + log_sigmoid(-u)).collect();
            let logd_terms: Vec<f64> = (0..k)
                .map(|i| lps[i] + log_sig_primes[i] - cp.ss[i])
                .collect();
            let log_d = logsumexp(&logd_terms);
            let p: f64 = (0..k).map(|i| lps[i].exp() * sigs[i]).sum();
            let t = SQUEEZE_LO + SQUEEZE_SPAN * p;
            let ea = cp.a.exp();
            let tt = t * (1.0 - t);

            // Through y = logit(t) e^a + b and ld's -ln t - ln(1-t) term.
            let g_t = gy * ea / tt + g_logdet * (2.0 * t - 1.0) / tt;
            let g_p = SQUEEZE_SPAN * g_t;

            let gslice = &mut g_out[j * stride..(j + 1) * stride];
            let mut w_sum = 0.0;
            let mut ws = vec![0.0; k];
            let mut gx = 0.0;
            for i in 0..k {
                // r_i = softmax share of the density sum D.
                let r = (logd_terms[i] - log_d).exp();
                // pi_i * dL/dpi_i, computed in log space so vanishing weights
                // cannot overflow.
                let w = g_p * lps[i].exp() * sigs[i] + g_logdet * r;
                ws[i] = w;
                w_sum += w;
                // dL/du_i: through p and through log D (sigma'' = sigma'(1-2s)).
                let pi_sig_prime = (lps[i] + log_sig_primes[i]).exp();
                let g_u = g_p * pi_sig_prime + g_logdet * r * (1.0 - 2.0 * sigs[i]);
                let e_ms = (-cp.ss[i]).exp();
                gslice[k + i] = -g_u * e_ms; // mu_i
                gslice[2 * k + i] = -g_u * us[i] - g_logdet * r; // s_i
                gx += g_u * e_ms;
            }
            for i in 0..k {
                // Softmax backward: d/d logit_i with w = pi * dL/dpi.
                gslice[i] = ws[i] - lps[i].exp() * w_sum;
            }
            gslice[3 * k] = gy * logit(t) * ea + g_logdet; // a
            gslice[3 * k + 1] = gy; // b
            g_x2[j] = gx;
        }

        let (g_x1_net, g_ctx) = self.net.backward(&self.params, &cache, &g_out, grad);
        let g_x1: Vec<f64> = g1.iter().zip(&g_x1_net).map(|(a, b)| a + b).collect();
        Ok((self.mask.scatter(&g_x1, &g_x2), g_ctx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{
        finite_diff_gradient, numeric_jacobian_logdet, rel_err, Rng,
    };

    fn make(ctx_dim: usize, seed: u64) -> (MixLogisticCoupling, Rng) {
        let mut rng = Rng::from_seed(seed);
        let mut l = MixLogisticCoupling::new(
            SplitMask::checker(4),
            3,
            6,
            2,
            ctx_dim,
            &mut rng,
        )
        .unwrap();
        l.randomize(&mut rng, 1.0);
        (l, rng)
    }

    #[test]
    fn single_component_cdf_check_value() {
        // One logistic component, x - mu = 4, log-scale -1: the CDF is
        // sigma(4e), within 2e-5 of 1.
        let p = mix_log_cdf(4.0, &[0.0], &[0.0], &[-1.0]);
        let gap = 1.0 - p;
        assert!(gap > 1.5e-5 && gap < 2.0e-5, "gap {gap:e}");
    }

    #[test]
    fn cdf_is_monotone_and_normalized() {
        let lps = [(0.3f64).ln(), (0.7f64).ln()];
        let mus = [-1.0, 2.0];
        let ss = [0.0, -0.5];
        let mut prev = 0.0;
        for i in 0..100 {
            let x = -30.0 + i as f64 * 0.6;
            let p = mix_log_cdf(x, &lps, &mus, &ss);
            assert!(p >= prev);
            prev = p;
        }
        assert!(mix_log_cdf(-1e4, &lps, &mus, &ss) < 1e-10);
        assert!(mix_log_cdf(1e4, &lps, &mus, &ss) > 1.0 - 1e-10);
    }

    #[test]
    fn fresh_layer_maps_zero_to_zero() {
        // Zero-initialized nets give a single effective mixture with
        // pi uniform, mu = 0, s = 0, a = 0, b = 0: then p(0) = 1/2,
        // t = 1/2, y = logit(1/2) = 0.
        let mut rng = Rng::from_seed(1);
        let l = MixLogisticCoupling::new(SplitMask::checker(2), 4, 5, 1, 0, &mut rng).unwrap();
        let (y, _) = l.forward(&[0.7, 0.0], None).unwrap();
        assert_eq!(y[0], 0.7);
        assert!(y[1].abs() < 1e-14);
    }

    #[test]
    fn round_trip() {
        for ctx_dim in [0usize, 2] {
            let (l, mut rng) = make(ctx_dim, 7 + ctx_dim as u64);
            for _ in 0..20 {
                let x = rng.normal_vec(4);
                let ctx = (ctx_dim > 0).then(|| rng.normal_vec(ctx_dim));
                let (y, ld) = l.forward(&x, ctx.as_deref()).unwrap();
                let (x2, ld_inv) = l.inverse(&y, ctx.as_deref()).unwrap();
                for (a, b) in x.iter().zip(&x2) {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
                assert!((ld + ld_inv).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn inverse_rejects_points_outside_image() {
        let (l, _) = make(0, 9);
        // The image of each transformed coordinate is bounded by
        // logit((0.05, 0.95)) * e^a + b; +/- 1e6 is far outside.
        let err = l.inverse(&[0.0, 1e6, 0.0, 0.0], None).unwrap_err();
        assert!(matches!(err, Error::OutOfImage { .. }));
        let err = l.inverse(&[0.0, 0.0, 0.0, -1e6], None).unwrap_err();
        assert!(matches!(err, Error::OutOfImage { .. }));
    }

    #[test]
    fn logdet_matches_numeric_jacobian() {
        let (l, mut rng) = make(0, 11);
        for _ in 0..5 {
            let x = rng.normal_vec(4);
            let (_, ld) = l.forward(&x, None).unwrap();
            let nld =
                numeric_jacobian_logdet(|v| l.forward(v, None).unwrap().0, &x, 1e-5).unwrap();
            assert!(rel_err(ld, nld) < 1e-6, "{ld} vs {nld}");
        }
    }

    #[test]
    fn logit_stage_derivative_is_bounded() {
        let (l, mut rng) = make(0, 13);
        let bound = logit_stage_bound();
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| 10.0 * rng.normal()).collect();
            for v in l.logit_stage_log_derivs(&x, None).unwrap() {
                assert!(v <= bound + 1e-12, "{v} > {bound}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for ctx_dim in [0usize, 2] {
            let (l, mut rng) = make(ctx_dim, 17 + ctx_dim as u64);
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
}
