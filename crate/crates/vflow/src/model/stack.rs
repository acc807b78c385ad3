//! A chain of invertible layers sharing one dimension.

use crate::error::{Error, Result};
use crate::layers::Layer;

/// Per-layer inputs kept by a cached forward pass, for the backward walk.
#[derive(Debug, Clone)]
pub struct ChainCache {
    /// `inputs[l]` is the vector fed into layer `l`; the chain input is
    /// `inputs[0]`.
    pub(crate) inputs: Vec<Vec<f64>>,
    pub(crate) output: Vec<f64>,
}

impl ChainCache {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct LayerStack {
    dim: usize,
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.dim() != dim {
                return Err(Error::DimMismatch {
                    what: "stack layer dimension",
                    expected: dim,
                    got: l.dim(),
                }
                .at_layer(i));
            }
        }
        Ok(LayerStack { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Offset of each layer's parameters inside the stack's flat vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offs.push(off);
            off += l.param_count();
        }
        offs
    }

    pub fn read_params_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.param_count());
        let mut off = 0;
        for l in &self.layers {
            let n = l.param_count();
            out[off..off + n].copy_from_slice(l.params());
            off += n;
        }
    }

    pub fn write_params_from(&mut self, src: &[f64]) {
        debug_assert_eq!(src.len(), self.param_count());
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.param_count();
            l.params_mut().copy_from_slice(&src[off..off + n]);
            off += n;
        }
    }

    /// Apply every layer in order; returns the output and the summed
    /// log-determinant.
    pub fn forward(&self, x: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let mut h = x.to_vec();
        let mut ld = 0.0;
        for (i, l) in self.layers.iter().enumerate() {
            let (next, l_ld) = l.forward(&h, ctx).map_err(|e| e.at_layer(i))?;
            h = next;
            ld += l_ld;
        }
        Ok((h, ld))
    }

    /// Forward pass that also keeps each layer's input for `backward`.
    pub fn forward_cached(
        &self,
        x: &[f64],
        ctx: Option<&[f64]>,
    ) -> Result<(Vec<f64>, f64, ChainCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let mut ld = 0.0;
        for (i, l) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let (next, l_ld) = l.forward(&h, ctx).map_err(|e| e.at_layer(i))?;
            h = next;
            ld += l_ld;
        }
        Ok((
            h.clone(),
            ld,
            ChainCache {
                inputs,
                output: h,
            },
        ))
    }

    /// Apply every layer's inverse in reverse order. The returned
    /// log-determinant is for the inverse map (the negated forward one).
    pub fn inverse(&self, y: &[f64], ctx: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let mut h = y.to_vec();
        let mut ld = 0.0;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (prev, l_ld) = l.inverse(&h, ctx).map_err(|e| e.at_layer(i))?;
            h = prev;
            ld += l_ld;
        }
        Ok((h, ld))
    }

    /// Backward pass of `<g_out, forward(x)> + g_logdet * logdet(x)`.
    ///
    /// `grad` is the stack's flat gradient buffer (`param_count` long);
    /// gradients accumulate into it. Returns the gradient with respect to
    /// the chain input and to the context (zeros-length if no context was
    /// given).
    pub fn backward(
        &self,
        cache: &ChainCache,
        ctx: Option<&[f64]>,
        g_out: &[f64],
        g_logdet: f64,
        grad: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        debug_assert_eq!(grad.len(), self.param_count());
        let offsets = self.layer_offsets();
        let mut g = g_out.to_vec();
        let mut g_ctx = vec![0.0; ctx.map_or(0, <[f64]>::len)];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let n = l.param_count();
            let slice = &mut grad[offsets[i]..offsets[i] + n];
            let (g_in, g_c) = l
                .backward(&cache.inputs[i], ctx, &g, g_logdet, slice)
                .map_err(|e| e.at_layer(i))?;
            for (acc, v) in g_ctx.iter_mut().zip(&g_c) {
                *acc += v;
            }
            g = g_in;
        }
        Ok((g, g_ctx))
    }

    /// Data-dependent initialization: walk the chain with a batch and set
    /// every normalization layer so its outputs on that batch are
    /// standardized, transforming the batch as it goes.
    pub fn init_actnorms(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.len() < 2 {
            return Err(Error::InvalidConfig {
                msg: "normalization init needs at least 2 batch rows".into(),
            });
        }
        let n = batch.len() as f64;
        let mut rows: Vec<Vec<f64>> = batch.to_vec();
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Layer::ActNorm(a) = l {
                let d = a.dim();
                let mut mean = vec![0.0; d];
                for r in &rows {
                    for (m, v) in mean.iter_mut().zip(r) {
                        *m += v / n;
                    }
                }
                let mut std = vec![0.0; d];
                for r in &rows {
                    for (s, (v, m)) in std.iter_mut().zip(r.iter().zip(&mean)) {
                        *s += (v - m) * (v - m) / n;
                    }
                }
                for s in &mut std {
                    *s = s.sqrt();
                }
                a.init_from_moments(&mean, &std).map_err(|e| e.at_layer(i))?;
            }
            for r in &mut rows {
                let (next, _) = l.forward(r, None).map_err(|e| e.at_layer(i))?;
                *r = next;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{
        ActNorm, AffineCoupling, PointwiseLinear, SplitMask, TupleFlip,
    };
    use crate::numerics::{finite_diff_gradient, rel_err, Rng};

    fn mixed_stack(ctx_dim: usize, rng: &mut Rng) -> LayerStack {
        let mut an = ActNorm::identity(4);
        an.randomize(rng, 0.5);
        let mut c1 = AffineCoupling::new(SplitMask::checker(4), 6, 1, ctx_dim, true, rng);
        c1.randomize(rng, 1.0);
        let mut c2 = AffineCoupling::new(
            SplitMask::checker(4).flipped(),
            6,
            1,
            ctx_dim,
            true,
            rng,
        );
        c2.randomize(rng, 1.0);
        LayerStack::new(
            4,
            vec![
                Layer::ActNorm(an),
                Layer::PointwiseLinear(PointwiseLinear::random_rotation(4, rng)),
                Layer::AffineCoupling(c1),
                Layer::TupleFlip(TupleFlip::from_mask(&SplitMask::checker(4)).unwrap()),
                Layer::AffineCoupling(c2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn mismatched_layer_dim_is_rejected() {
        let err = LayerStack::new(3, vec![Layer::ActNorm(ActNorm::identity(4))]).unwrap_err();
        assert!(matches!(err, Error::AtLayer { index: 0, .. }));
    }

    #[test]
    fn forward_inverse_round_trip() {
        let mut rng = Rng::from_seed(3);
        for ctx_dim in [0usize, 2] {
            let s = mixed_stack(ctx_dim, &mut rng);
            for _ in 0..10 {
                let x = rng.normal_vec(4);
                let ctx = (ctx_dim > 0).then(|| rng.normal_vec(ctx_dim));
                let (y, ld) = s.forward(&x, ctx.as_deref()).unwrap();
                let (x2, ld_inv) = s.inverse(&y, ctx.as_deref()).unwrap();
                for (a, b) in x.iter().zip(&x2) {
                    assert!((a - b).abs() < 1e-9);
                }
                assert!((ld + ld_inv).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn param_io_round_trip() {
        let mut rng = Rng::from_seed(4);
        let mut s = mixed_stack(2, &mut rng);
        let mut flat = vec![0.0; s.param_count()];
        s.read_params_into(&mut flat);
        let x = rng.normal_vec(4);
        let ctx = rng.normal_vec(2);
        let (y0, _) = s.forward(&x, Some(&ctx)).unwrap();
        let mut flat2 = flat.clone();
        for v in &mut flat2 {
            *v += 0.05;
        }
        s.write_params_from(&mut flat2);
        let (y1, _) = s.forward(&x, Some(&ctx)).unwrap();
        assert!(y0.iter().zip(&y1).any(|(a, b)| (a - b).abs() > 1e-6));
        s.write_params_from(&flat);
        let (y2, _) = s.forward(&x, Some(&ctx)).unwrap();
        assert_eq!(y0, y2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::from_seed(5);
        for ctx_dim in [0usize, 2] {
            let s = mixed_stack(ctx_dim, &mut rng);
            let x = rng.normal_vec(4);
            let ctx = (ctx_dim > 0).then(|| rng.normal_vec(ctx_dim));
            let g = rng.normal_vec(4);
            let gl = rng.normal();

            let loss = |params: &[f64], x: &[f64], ctx: Option<&[f64]>| {
                let mut s2 = s.clone();
                s2.write_params_from(params);
                let (y, ld) = s2.forward(x, ctx).unwrap();
                y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + gl * ld
            };

            let (_, _, cache) = s.forward_cached(&x, ctx.as_deref()).unwrap();
            let mut gp = vec![0.0; s.param_count()];
            let (gx, gctx) = s
                .backward(&cache, ctx.as_deref(), &g, gl, &mut gp)
                .unwrap();

            let mut flat = vec![0.0; s.param_count()];
            s.read_params_into(&mut flat);
            let close = |a: f64, b: f64| rel_err(a, b) < 1e-4 || (a - b).abs() < 1e-9;
            let ngp = finite_diff_gradient(|q| loss(q, &x, ctx.as_deref()), &flat, 1e-5);
            for (a, b) in gp.iter().zip(&ngp) {
                assert!(close(*a, *b), "param grad {a} vs {b}");
            }
            let ngx = finite_diff_gradient(|q| loss(&flat, q, ctx.as_deref()), &x, 1e-5);
            for (a, b) in gx.iter().zip(&ngx) {
                assert!(close(*a, *b), "input grad {a} vs {b}");
            }
            if let Some(c) = &ctx {
                let ngc = finite_diff_gradient(|q| loss(&flat, &x, Some(q)), c, 1e-5);
                for (a, b) in gctx.iter().zip(&ngc) {
                    assert!(close(*a, *b), "ctx grad {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn actnorm_init_standardizes_the_batch() {
        let mut rng = Rng::from_seed(6);
        let mut s = LayerStack::new(
            3,
            vec![
                Layer::ActNorm(ActNorm::identity(3)),
                Layer::PointwiseLinear(PointwiseLinear::identity(3)),
                Layer::ActNorm(ActNorm::identity(3)),
            ],
        )
        .unwrap();
        let batch: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                vec![
                    3.0 + 2.0 * rng.normal(),
                    -1.0 + 0.5 * rng.normal(),
                    10.0 * rng.normal(),
                ]
            })
            .collect();
        s.init_actnorms(&batch).unwrap();
        let n = batch.len() as f64;
        let mut mean = vec![0.0; 3];
        let mut sq = vec![0.0; 3];
        for r in &batch {
            let (y, _) = s.forward(r, None).unwrap();
            for d in 0..3 {
                mean[d] += y[d] / n;
                sq[d] += y[d] * y[d] / n;
            }
        }
        for d in 0..3 {
            assert!(mean[d].abs() < 1e-10, "mean {}", mean[d]);
            let var = sq[d] - mean[d] * mean[d];
            assert!((var - 1.0).abs() < 1e-8, "var {var}");
        }
    }

    #[test]
    fn inverse_reports_failing_layer_index() {
        use crate::layers::Sigmoid;
        let s = LayerStack::new(
            2,
            vec![
                Layer::ActNorm(ActNorm::identity(2)),
                Layer::Sigmoid(Sigmoid::new(2)),
            ],
        )
        .unwrap();
        // 1.5 is outside the sigmoid image; the sigmoid sits at index 1.
        let err = s.inverse(&[0.5, 1.5], None).unwrap_err();
        match err {
            Error::AtLayer { index, source } => {
                assert_eq!(index, 1);
                assert!(matches!(*source, Error::OutOfImage { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
