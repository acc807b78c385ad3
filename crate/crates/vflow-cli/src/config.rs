//! TOML run configuration and its translation into library types.

use serde::Deserialize;
use vflow::model::{FlowSpec, LayerSpec, MaskSpec, ModelSpec};
use vflow::train::{LrSchedule, TrainConfig};
use vflow::{Error, Result};

/// Top-level config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Default seed; the --seed flag wins over this.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_x: usize,
    #[serde(default)]
    pub d_z: usize,
    /// Soft-clamp coupling log-scales (on unless disabled).
    #[serde(default = "default_true")]
    pub s_clamp: bool,
    pub p: DensityConfig,
    pub q: Option<ConditionalConfig>,
    pub r: Option<DequantConfig>,
}

/// The density flow: glow-style steps over the joint [x || z], optionally
/// entered through a layer that couples the two blocks.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub steps: usize,
    pub hidden_units: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    /// Coupling family for each step.
    #[serde(default)]
    pub coupling: CouplingKind,
    /// Mixture components (mix_logistic coupling only).
    pub components: Option<usize>,
    /// Prepend a data/augmentation mixing layer (requires d_z > 0).
    pub entry_mix: Option<EntryMixConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    #[default]
    Affine,
    MixLogistic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryMixConfig {
    pub hidden_units: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
}

/// The augmentation encoder q(z|x).
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConditionalConfig {
    /// Conditional glow steps.
    Glow {
        steps: usize,
        hidden_units: usize,
        #[serde(default = "default_hidden_layers")]
        hidden_layers: usize,
    },
    /// A single conditional Gaussian.
    Gaussian {
        hidden_units: usize,
        #[serde(default = "default_hidden_layers")]
        hidden_layers: usize,
    },
}

/// The dequantizer r(u|x): conditional glow squashed into (0,1)^d.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DequantConfig {
    pub steps: usize,
    pub hidden_units: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: LrConfig,
    /// Global gradient-norm limit; absent disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Train the dequantization bound on quantized data.
    #[serde(default)]
    pub discrete: bool,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Held-out points scored on each log row (0 disables).
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("empty train section must deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrConfig {
    Constant {
        value: f64,
    },
    /// Linear warmup to `peak`, hold, then per-step decay with a floor.
    Ramp {
        peak: f64,
        warmup_steps: u64,
        hold_until: u64,
        decay: f64,
        floor: f64,
    },
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig::Constant { value: 1e-3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// The two-dimensional checkerboard benchmark.
    Checkerboard {
        #[serde(default = "default_scale")]
        scale: f64,
        /// Quantization levels per axis for discrete training.
        levels: Option<usize>,
    },
    /// Rows of d_x floats, no header.
    Csv { path: String },
}

fn default_true() -> bool {
    true
}
fn default_hidden_layers() -> usize {
    2
}
fn default_steps() -> u64 {
    10_000
}
fn default_batch() -> usize {
    64
}
fn default_clip() -> Option<f64> {
    Some(100.0)
}
fn default_log_every() -> u64 {
    500
}
fn default_eval_points() -> usize {
    256
}
fn default_eval_samples() -> usize {
    16
}
fn default_scale() -> f64 {
    2.0
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig {
        msg: format!("config: {e}"),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.d_x == 0 {
            return Err(Error::InvalidConfig {
                msg: "model.d_x must be positive".into(),
            });
        }
        if m.d_z > 0 && m.q.is_none() {
            return Err(Error::InvalidConfig {
                msg: "model.d_z > 0 needs a [model.q] section".into(),
            });
        }
        if m.d_z == 0 && m.q.is_some() {
            return Err(Error::InvalidConfig {
                msg: "[model.q] needs model.d_z > 0".into(),
            });
        }
        if m.p.entry_mix.is_some() && m.d_z == 0 {
            return Err(Error::InvalidConfig {
                msg: "entry_mix needs model.d_z > 0".into(),
            });
        }
        match (m.p.coupling, m.p.components) {
            (CouplingKind::MixLogistic, None) => {
                return Err(Error::InvalidConfig {
                    msg: "mix_logistic coupling needs model.p.components".into(),
                })
            }
            (CouplingKind::Affine, Some(_)) => {
                return Err(Error::InvalidConfig {
                    msg: "model.p.components only applies to mix_logistic coupling".into(),
                })
            }
            _ => {}
        }
        if self.train.discrete && m.r.is_none() {
            return Err(Error::InvalidConfig {
                msg: "discrete training needs a [model.r] section".into(),
            });
        }
        if self.train.discrete {
            match &self.data {
                DataConfig::Checkerboard { levels: None, .. } => {
                    return Err(Error::InvalidConfig {
                        msg: "discrete training on checkerboard data needs data.levels".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        let dim = m.d_x + m.d_z;

        let mut p_layers = Vec::new();
        if let Some(entry) = &m.p.entry_mix {
            p_layers.push(LayerSpec::MixAffine {
                hidden_units: entry.hidden_units,
                hidden_layers: entry.hidden_layers,
            });
        }
        for s in 0..m.p.steps {
            let mask = MaskSpec::Checker { odd: s % 2 == 1 };
            p_layers.push(LayerSpec::ActNorm);
            p_layers.push(LayerSpec::PointwiseLinear);
            p_layers.push(match m.p.coupling {
                CouplingKind::Affine => LayerSpec::AffineCoupling {
                    mask,
                    hidden_units: m.p.hidden_units,
                    hidden_layers: m.p.hidden_layers,
                },
                CouplingKind::MixLogistic => LayerSpec::MixLogisticCoupling {
                    mask,
                    components: m.p.components.unwrap_or(4),
                    hidden_units: m.p.hidden_units,
                    hidden_layers: m.p.hidden_layers,
                },
            });
        }

        let q = m.q.as_ref().map(|qc| match *qc {
            ConditionalConfig::Glow {
                steps,
                hidden_units,
                hidden_layers,
            } => FlowSpec::glow(m.d_z, m.d_x, steps, hidden_units, hidden_layers),
            ConditionalConfig::Gaussian {
                hidden_units,
                hidden_layers,
            } => FlowSpec {
                dim: m.d_z,
                ctx_dim: m.d_x,
                layers: vec![LayerSpec::GaussianConditional {
                    hidden_units,
                    hidden_layers,
                }],
            },
        });

        let r = m.r.as_ref().map(|rc| {
            let mut layers =
                FlowSpec::glow(m.d_x, m.d_x, rc.steps, rc.hidden_units, rc.hidden_layers).layers;
            // The dequantizer emits noise in (0,1)^d.
            layers.push(LayerSpec::Sigmoid);
            FlowSpec {
                dim: m.d_x,
                ctx_dim: m.d_x,
                layers,
            }
        });

        ModelSpec {
            d_x: m.d_x,
            d_z: m.d_z,
            p: FlowSpec {
                dim,
                ctx_dim: 0,
                layers: p_layers,
            },
            q,
            r,
            s_clamp: m.s_clamp,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            schedule: match t.lr {
                LrConfig::Constant { value } => LrSchedule::constant(value),
                LrConfig::Ramp {
                    peak,
                    warmup_steps,
                    hold_until,
                    decay,
                    floor,
                } => LrSchedule::Ramp {
                    peak,
                    warmup_steps,
                    hold_until,
                    decay,
                    floor,
                },
            },
            grad_clip: t.grad_clip,
            discrete: t.discrete,
            log_every: t.log_every,
            eval: None, // filled in by the train command with data-drawn points
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
        seed = 7
        [model]
        d_x = 2
        d_z = 8
        [model.p]
        steps = 2
        hidden_units = 50
        entry_mix = { hidden_units = 50 }
        [model.q]
        kind = "glow"
        steps = 1
        hidden_units = 50
        [train]
        steps = 1000
        [data]
        kind = "checkerboard"
    "#;

    #[test]
    fn toy_config_round_trips_into_a_model() {
        let cfg = parse(TOY).unwrap();
        let spec = cfg.model_spec();
        assert_eq!(spec.d_x, 2);
        assert_eq!(spec.d_z, 8);
        assert_eq!(spec.p.dim, 10);
        // entry + 2 * (actnorm, linear, coupling)
        assert_eq!(spec.p.layers.len(), 7);
        assert!(matches!(spec.p.layers[0], LayerSpec::MixAffine { .. }));
        let mut rng = vflow::numerics::Rng::from_seed(1);
        spec.build(&mut rng).unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = TOY.replace("seed = 7", "seed = 7\nbanana = 1");
        assert!(parse(&bad).is_err());
    }

    #[test]
    fn augmentation_needs_an_encoder() {
        let bad = TOY.replace(
            "[model.q]\n        kind = \"glow\"\n        steps = 1\n        hidden_units = 50\n",
            "",
        );
        let err = parse(&bad).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { .. }));
    }

    #[test]
    fn mix_logistic_needs_components() {
        let bad = TOY.replace(
            "steps = 2\n        hidden_units = 50",
            "steps = 2\n        hidden_units = 50\n        coupling = \"mix_logistic\"",
        );
        assert!(parse(&bad).is_err());
        let good = TOY.replace(
            "steps = 2\n        hidden_units = 50",
            "steps = 2\n        hidden_units = 50\n        coupling = \"mix_logistic\"\n        components = 4",
        );
        let cfg = parse(&good).unwrap();
        assert!(matches!(
            cfg.model_spec().p.layers[3],
            LayerSpec::MixLogisticCoupling { components: 4, .. }
        ));
    }

    #[test]
    fn dequant_flow_ends_in_a_sigmoid() {
        let with_r = TOY.replace(
            "[train]",
            "[model.r]\n        steps = 1\n        hidden_units = 8\n        [train]",
        );
        let cfg = parse(&with_r).unwrap();
        let spec = cfg.model_spec();
        let r = spec.r.as_ref().unwrap();
        assert!(matches!(r.layers.last(), Some(LayerSpec::Sigmoid)));
        assert_eq!(r.ctx_dim, 2);
    }

    #[test]
    fn gaussian_encoder_is_available() {
        let g = TOY.replace(
            "kind = \"glow\"\n        steps = 1\n        hidden_units = 50",
            "kind = \"gaussian\"\n        hidden_units = 20",
        );
        let cfg = parse(&g).unwrap();
        let q = cfg.model_spec().q.unwrap();
        assert_eq!(q.layers.len(), 1);
        assert!(matches!(q.layers[0], LayerSpec::GaussianConditional { .. }));
    }
}
