//! Declarative model descriptions.
//!
//! A `ModelSpec` is a plain-data recipe for a `VFlowModel`: enough to build
//! the model from scratch (given an RNG for initialization) and compact
//! enough to serialize into checkpoints, so a saved run can be reopened
//! without the original configuration file.

use crate::error::{Error, Result};
use crate::layers::{
    ActNorm, AffineCoupling, GaussianConditional, Layer, MixAffine, MixLogisticCoupling,
    PointwiseLinear, Sigmoid, SplitMask, TupleFlip,
};
use crate::numerics::Rng;

use super::flow::{ConditionalFlow, Flow, VFlowModel};
use super::stack::LayerStack;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSpec {
    /// Alternating coordinates; `odd` passes the odd indices through.
    Checker { odd: bool },
    /// Contiguous halves; `second` passes the upper half through.
    Channel { second: bool },
    Custom { pass: Vec<bool> },
}

impl MaskSpec {
    pub fn build(&self, dim: usize) -> Result<SplitMask> {
        match self {
            MaskSpec::Checker { odd } => {
                let m = SplitMask::checker(dim);
                Ok(if *odd { m.flipped() } else { m })
            }
            MaskSpec::Channel { second } => {
                let m = SplitMask::channel(dim);
                Ok(if *second { m.flipped() } else { m })
            }
            MaskSpec::Custom { pass } => {
                if pass.len() != dim {
                    return Err(Error::DimMismatch {
                        what: "custom mask length",
                        expected: dim,
                        got: pass.len(),
                    });
                }
                SplitMask::custom(pass.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    ActNorm,
    PointwiseLinear,
    AffineCoupling {
        mask: MaskSpec,
        hidden_units: usize,
        hidden_layers: usize,
    },
    MixLogisticCoupling {
        mask: MaskSpec,
        components: usize,
        hidden_units: usize,
        hidden_layers: usize,
    },
    Sigmoid,
    TupleFlip {
        mask: MaskSpec,
    },
    GaussianConditional {
        hidden_units: usize,
        hidden_layers: usize,
    },
    /// Entry layer of an augmented density flow: affine-couples the data
    /// block with the augmentation block. Only valid in the density flow.
    MixAffine {
        hidden_units: usize,
        hidden_layers: usize,
    },
}

impl LayerSpec {
    fn build(
        &self,
        dim: usize,
        ctx_dim: usize,
        split: Option<(usize, usize)>,
        s_clamp: bool,
        rng: &mut Rng,
    ) -> Result<Layer> {
        Ok(match self {
            LayerSpec::ActNorm => Layer::ActNorm(ActNorm::identity(dim)),
            LayerSpec::PointwiseLinear => {
                Layer::PointwiseLinear(PointwiseLinear::random_rotation(dim, rng))
            }
            LayerSpec::AffineCoupling {
                mask,
                hidden_units,
                hidden_layers,
            } => Layer::AffineCoupling(AffineCoupling::new(
                mask.build(dim)?,
                *hidden_units,
                *hidden_layers,
                ctx_dim,
                s_clamp,
                rng,
            )),
            LayerSpec::MixLogisticCoupling {
                mask,
                components,
                hidden_units,
                hidden_layers,
            } => Layer::MixLogistic(MixLogisticCoupling::new(
                mask.build(dim)?,
                *components,
                *hidden_units,
                *hidden_layers,
                ctx_dim,
                rng,
            )?),
            LayerSpec::Sigmoid => Layer::Sigmoid(Sigmoid::new(dim)),
            LayerSpec::TupleFlip { mask } => {
                Layer::TupleFlip(TupleFlip::from_mask(&mask.build(dim)?)?)
            }
            LayerSpec::GaussianConditional {
                hidden_units,
                hidden_layers,
            } => Layer::GaussianConditional(GaussianConditional::new(
                dim,
                ctx_dim,
                *hidden_units,
                *hidden_layers,
                rng,
            )),
            LayerSpec::MixAffine {
                hidden_units,
                hidden_layers,
            } => {
                let (d_x, d_z) = split.ok_or(Error::InvalidConfig {
                    msg: "block-mixing layer is only valid in the density flow".into(),
                })?;
                if d_x + d_z != dim {
                    return Err(Error::DimMismatch {
                        what: "block-mixing layer dimension",
                        expected: dim,
                        got: d_x + d_z,
                    });
                }
                if d_z == 0 {
                    return Err(Error::InvalidConfig {
                        msg: "block-mixing layer needs a nonempty augmentation block".into(),
                    });
                }
                Layer::MixAffine(MixAffine::new(
                    d_x,
                    d_z,
                    *hidden_units,
                    *hidden_layers,
                    s_clamp,
                    rng,
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSpec {
    pub dim: usize,
    pub ctx_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl FlowSpec {
    fn build_stack(
        &self,
        split: Option<(usize, usize)>,
        s_clamp: bool,
        rng: &mut Rng,
    ) -> Result<LayerStack> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, ls) in self.layers.iter().enumerate() {
            layers.push(
                ls.build(self.dim, self.ctx_dim, split, s_clamp, rng)
                    .map_err(|e| e.at_layer(i))?,
            );
        }
        LayerStack::new(self.dim, layers)
    }

    /// Build an unconditional flow from this description.
    pub fn build_flow(&self, s_clamp: bool, rng: &mut Rng) -> Result<Flow> {
        if self.ctx_dim != 0 {
            return Err(Error::InvalidConfig {
                msg: "an unconditional flow cannot take context".into(),
            });
        }
        Ok(Flow::new(self.build_stack(None, s_clamp, rng)?))
    }

    /// Build a conditional flow (sampling direction) from this description.
    pub fn build_conditional(&self, s_clamp: bool, rng: &mut Rng) -> Result<ConditionalFlow> {
        ConditionalFlow::new(self.build_stack(None, s_clamp, rng)?, self.ctx_dim)
    }

    /// One standard density-flow step: normalization, an invertible linear
    /// mix, and an affine coupling over the given mask.
    pub fn glow_step(
        mask: MaskSpec,
        hidden_units: usize,
        hidden_layers: usize,
    ) -> [LayerSpec; 3] {
        [
            LayerSpec::ActNorm,
            LayerSpec::PointwiseLinear,
            LayerSpec::AffineCoupling {
                mask,
                hidden_units,
                hidden_layers,
            },
        ]
    }

    /// A chain of `steps` glow steps with alternating checkerboard masks.
    pub fn glow(
        dim: usize,
        ctx_dim: usize,
        steps: usize,
        hidden_units: usize,
        hidden_layers: usize,
    ) -> FlowSpec {
        let mut layers = Vec::new();
        for s in 0..steps {
            layers.extend(Self::glow_step(
                MaskSpec::Checker { odd: s % 2 == 1 },
                hidden_units,
                hidden_layers,
            ));
        }
        FlowSpec {
            dim,
            ctx_dim,
            layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub d_x: usize,
    pub d_z: usize,
    pub p: FlowSpec,
    pub q: Option<FlowSpec>,
    pub r: Option<FlowSpec>,
    /// Soft-clamp the log-scales of affine couplings (recommended).
    pub s_clamp: bool,
}

impl ModelSpec {
    /// Build a freshly initialized model. Couplings start at the identity;
    /// linear mixes start as random rotations drawn from `rng`.
    pub fn build(&self, rng: &mut Rng) -> Result<VFlowModel> {
        if self.p.dim != self.d_x + self.d_z {
            return Err(Error::DimMismatch {
                what: "density flow dimension",
                expected: self.d_x + self.d_z,
                got: self.p.dim,
            });
        }
        if self.p.ctx_dim != 0 {
            return Err(Error::InvalidConfig {
                msg: "density flow cannot be conditional".into(),
            });
        }
        let split = (self.d_z > 0).then_some((self.d_x, self.d_z));
        let p = Flow::new(self.p.build_stack(split, self.s_clamp, rng)?);
        let q = match &self.q {
            Some(qs) => Some(ConditionalFlow::new(
                qs.build_stack(None, self.s_clamp, rng)?,
                qs.ctx_dim,
            )?),
            None => None,
        };
        let r = match &self.r {
            Some(rs) => Some(ConditionalFlow::new(
                rs.build_stack(None, self.s_clamp, rng)?,
                rs.ctx_dim,
            )?),
            None => None,
        };
        VFlowModel::new(self.d_x, self.d_z, p, q, r)
    }
}
