//! Binary checkpoint format.
//!
//! A checkpoint captures everything a run needs to continue bit-for-bit:
//! the architecture, named parameter tensors, optimizer moments, the step
//! counter, and the exact position of the random stream. Encoding is
//! canonical — saving, loading, and saving again yields identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FlowSpec, LayerSpec, MaskSpec, ModelSpec, ParamRegistry};
use crate::numerics::{Rng, RngState, RNG_ALGORITHM};
use crate::train::adam::Adam;
use crate::train::run::TrainState;

const MAGIC: &[u8; 8] = b"VFLOWCK\0";
const VERSION: u32 = 1;

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn new() -> Self {
        Enc { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.raw(s.as_bytes());
    }

    fn floats(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for &x in xs {
            self.f64(x);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Dec { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Format {
                msg: "checkpoint truncated".into(),
            });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            msg: "checkpoint holds invalid utf-8".into(),
        })
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut xs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            xs.push(self.f64()?);
        }
        Ok(xs)
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format {
                msg: format!("invalid flag byte {other}"),
            }),
        }
    }

    fn done(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(Error::Format {
                msg: format!("{} trailing bytes", self.buf.len() - self.at),
            });
        }
        Ok(())
    }
}

fn enc_mask(e: &mut Enc, mask: &MaskSpec) {
    match mask {
        MaskSpec::Checker { odd } => {
            e.u8(0);
            e.u8(*odd as u8);
        }
        MaskSpec::Channel { second } => {
            e.u8(1);
            e.u8(*second as u8);
        }
        MaskSpec::Custom { pass } => {
            e.u8(2);
            e.u64(pass.len() as u64);
            for &b in pass {
                e.u8(b as u8);
            }
        }
    }
}

fn dec_mask(d: &mut Dec) -> Result<MaskSpec> {
    match d.u8()? {
        0 => Ok(MaskSpec::Checker { odd: d.flag()? }),
        1 => Ok(MaskSpec::Channel { second: d.flag()? }),
        2 => {
            let n = d.u64()? as usize;
            let mut pass = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                pass.push(d.flag()?);
            }
            Ok(MaskSpec::Custom { pass })
        }
        other => Err(Error::Format {
            msg: format!("unknown mask tag {other}"),
        }),
    }
}

fn enc_layer(e: &mut Enc, layer: &LayerSpec) {
    match layer {
        LayerSpec::ActNorm => e.u8(0),
        LayerSpec::PointwiseLinear => e.u8(1),
        LayerSpec::AffineCoupling {
            mask,
            hidden_units,
            hidden_layers,
        } => {
            e.u8(2);
            enc_mask(e, mask);
            e.u32(*hidden_units as u32);
            e.u32(*hidden_layers as u32);
        }
        LayerSpec::MixLogisticCoupling {
            mask,
            components,
            hidden_units,
            hidden_layers,
        } => {
            e.u8(3);
            enc_mask(e, mask);
            e.u32(*components as u32);
            e.u32(*hidden_units as u32);
            e.u32(*hidden_layers as u32);
        }
        LayerSpec::Sigmoid => e.u8(4),
        LayerSpec::TupleFlip { mask } => {
            e.u8(5);
            enc_mask(e, mask);
        }
        LayerSpec::GaussianConditional {
            hidden_units,
            hidden_layers,
        } => {
            e.u8(6);
            e.u32(*hidden_units as u32);
            e.u32(*hidden_layers as u32);
        }
        LayerSpec::MixAffine {
            hidden_units,
            hidden_layers,
        } => {
            e.u8(7);
            e.u32(*hidden_units as u32);
            e.u32(*hidden_layers as u32);
        }
    }
}

fn dec_layer(d: &mut Dec) -> Result<LayerSpec> {
    match d.u8()? {
        0 => Ok(LayerSpec::ActNorm),
        1 => Ok(LayerSpec::PointwiseLinear),
        2 => {
            let mask = dec_mask(d)?;
            let hidden_units = d.u32()? as usize;
            let hidden_layers = d.u32()? as usize;
            Ok(LayerSpec::AffineCoupling {
                mask,
                hidden_units,
                hidden_layers,
            })
        }
        3 => {
            let mask = dec_mask(d)?;
            let components = d.u32()? as usize;
            let hidden_units = d.u32()? as usize;
            let hidden_layers = d.u32()? as usize;
            Ok(LayerSpec::MixLogisticCoupling {
                mask,
                components,
                hidden_units,
                hidden_layers,
            })
        }
        4 => Ok(LayerSpec::Sigmoid),
        5 => Ok(LayerSpec::TupleFlip { mask: dec_mask(d)? }),
        6 => {
            let hidden_units = d.u32()? as usize;
            let hidden_layers = d.u32()? as usize;
            Ok(LayerSpec::GaussianConditional {
                hidden_units,
                hidden_layers,
            })
        }
        7 => {
            let hidden_units = d.u32()? as usize;
            let hidden_layers = d.u32()? as usize;
            Ok(LayerSpec::MixAffine {
                hidden_units,
                hidden_layers,
            })
        }
        other => Err(Error::Format {
            msg: format!("unknown layer tag {other}"),
        }),
    }
}

fn enc_flow(e: &mut Enc, f: &FlowSpec) {
    e.u32(f.dim as u32);
    e.u32(f.ctx_dim as u32);
    e.u64(f.layers.len() as u64);
    for l in &f.layers {
        enc_layer(e, l);
    }
}

fn dec_flow(d: &mut Dec) -> Result<FlowSpec> {
    let dim = d.u32()? as usize;
    let ctx_dim = d.u32()? as usize;
    let n = d.u64()? as usize;
    let mut layers = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        layers.push(dec_layer(d)?);
    }
    Ok(FlowSpec {
        dim,
        ctx_dim,
        layers,
    })
}

fn enc_model(e: &mut Enc, m: &ModelSpec) {
    e.u32(m.d_x as u32);
    e.u32(m.d_z as u32);
    e.u8(m.s_clamp as u8);
    enc_flow(e, &m.p);
    match &m.q {
        Some(q) => {
            e.u8(1);
            enc_flow(e, q);
        }
        None => e.u8(0),
    }
    match &m.r {
        Some(r) => {
            e.u8(1);
            enc_flow(e, r);
        }
        None => e.u8(0),
    }
}

fn dec_model(d: &mut Dec) -> Result<ModelSpec> {
    let d_x = d.u32()? as usize;
    let d_z = d.u32()? as usize;
    let s_clamp = d.flag()?;
    let p = dec_flow(d)?;
    let q = if d.flag()? { Some(dec_flow(d)?) } else { None };
    let r = if d.flag()? { Some(dec_flow(d)?) } else { None };
    Ok(ModelSpec {
        d_x,
        d_z,
        p,
        q,
        r,
        s_clamp,
    })
}

/// Serialize a run snapshot.
pub fn encode(state: &TrainState) -> Vec<u8> {
    let mut e = Enc::new();
    e.raw(MAGIC);
    e.u32(VERSION);

    let rng = state.rng.state();
    e.text(RNG_ALGORITHM);
    e.raw(&rng.seed);
    e.u128(rng.word_pos);
    e.u64(rng.seed_u64);

    e.u64(state.step);
    e.u8(state.actnorm_initialized as u8);
    enc_model(&mut e, &state.spec);

    let flat = state.registry.gather(&state.model);
    e.u64(state.registry.entries().len() as u64);
    for entry in state.registry.entries() {
        e.text(&entry.name);
        e.u8(entry.shape.len() as u8);
        for &dim in &entry.shape {
            e.u32(dim as u32);
        }
        for &x in &flat[entry.range()] {
            e.f64(x);
        }
    }

    let (m, v) = state.opt.moments();
    e.u64(state.opt.t());
    e.floats(m);
    e.floats(v);
    e.buf
}

/// Rebuild a run snapshot from bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut d = Dec::new(bytes);
    if d.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format {
            msg: "not a checkpoint file (bad magic)".into(),
        });
    }
    let version = d.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            msg: format!("unsupported checkpoint version {version}"),
        });
    }

    let algo = d.text()?;
    if algo != RNG_ALGORITHM {
        return Err(Error::Format {
            msg: format!("checkpoint uses rng '{algo}', this build uses '{RNG_ALGORITHM}'"),
        });
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(d.take(32)?);
    let word_pos = d.u128()?;
    let seed_u64 = d.u64()?;

    let step = d.u64()?;
    let actnorm_initialized = d.flag()?;
    let spec = dec_model(&mut d)?;

    // The throwaway stream only feeds the initial weight draw, which the
    // stored tensors overwrite entirely.
    let mut build_rng = Rng::from_seed(0);
    let mut model = spec.build(&mut build_rng)?;
    let registry = ParamRegistry::new(&model);

    let n_entries = d.u64()? as usize;
    if n_entries != registry.entries().len() {
        return Err(Error::Format {
            msg: format!(
                "checkpoint stores {n_entries} tensors, architecture has {}",
                registry.entries().len()
            ),
        });
    }
    let mut flat = vec![0.0; registry.len()];
    for entry in registry.entries() {
        let name = d.text()?;
        if name != entry.name {
            return Err(Error::Format {
                msg: format!("tensor order mismatch: '{name}' where '{}' belongs", entry.name),
            });
        }
        let ndim = d.u8()? as usize;
        if ndim != entry.shape.len() {
            return Err(Error::Format {
                msg: format!("tensor '{name}' rank mismatch"),
            });
        }
        for &expect in &entry.shape {
            let got = d.u32()? as usize;
            if got != expect {
                return Err(Error::Format {
                    msg: format!("tensor '{name}' shape mismatch"),
                });
            }
        }
        for slot in &mut flat[entry.range()] {
            *slot = d.f64()?;
        }
    }
    registry.scatter(&mut model, &flat)?;

    let t = d.u64()?;
    let m = d.floats()?;
    let v = d.floats()?;
    if m.len() != registry.len() {
        return Err(Error::Format {
            msg: "optimizer moments do not match parameter count".into(),
        });
    }
    let opt = Adam::restore(t, m, v)?;
    d.done()?;

    let rng = Rng::restore(&RngState {
        seed,
        word_pos,
        seed_u64,
    });
    Ok(TrainState {
        spec,
        model,
        registry,
        opt,
        rng,
        step,
        actnorm_initialized,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    fs::write(path, encode(state))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::tests::toy_spec;

    fn sample_spec() -> ModelSpec {
        // One of every layer kind somewhere in the model.
        let mut spec = toy_spec(2, 2);
        spec.p.layers.push(LayerSpec::TupleFlip {
            mask: MaskSpec::Custom {
                pass: vec![true, false, true, false],
            },
        });
        spec.p.layers.push(LayerSpec::MixLogisticCoupling {
            mask: MaskSpec::Channel { second: false },
            components: 3,
            hidden_units: 6,
            hidden_layers: 1,
        });
        spec.r = Some(FlowSpec {
            dim: 2,
            ctx_dim: 2,
            layers: vec![
                LayerSpec::GaussianConditional {
                    hidden_units: 4,
                    hidden_layers: 1,
                },
                LayerSpec::Sigmoid,
            ],
        });
        spec
    }

    #[test]
    fn spec_survives_the_codec() {
        let spec = sample_spec();
        let mut e = Enc::new();
        enc_model(&mut e, &spec);
        let mut d = Dec::new(&e.buf);
        let back = dec_model(&mut d).unwrap();
        d.done().unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut state = TrainState::new(sample_spec(), 77).unwrap();
        state.step = 42;
        state.actnorm_initialized = true;
        // Move the rng and optimizer off their start states.
        state.rng.normal_vec(13);
        let mut flat = state.registry.gather(&state.model);
        let grad: Vec<f64> = (0..flat.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        state.opt.step(1e-3, &mut flat, &grad).unwrap();
        state.registry.scatter(&mut state.model, &flat).unwrap();

        let first = encode(&state);
        let loaded = decode(&first).unwrap();
        let second = encode(&loaded);
        assert_eq!(first, second);

        assert_eq!(loaded.step, 42);
        assert!(loaded.actnorm_initialized);
        assert_eq!(loaded.rng.state(), state.rng.state());
        assert_eq!(loaded.opt.t(), 1);
        assert_eq!(
            loaded.registry.gather(&loaded.model),
            state.registry.gather(&state.model)
        );
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let state = TrainState::new(toy_spec(2, 1), 1).unwrap();
        let mut bytes = encode(&state);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let state = TrainState::new(toy_spec(2, 1), 1).unwrap();
        let bytes = encode(&state);
        for cut in [5usize, 20, bytes.len() / 2, bytes.len() - 3] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::Format { .. })),
                "cut at {cut} did not fail cleanly"
            );
        }
    }

    #[test]
    fn trailing_garbage_is_a_format_error() {
        let state = TrainState::new(toy_spec(2, 1), 1).unwrap();
        let mut bytes = encode(&state);
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let state = TrainState::new(toy_spec(2, 1), 1).unwrap();
        let mut bytes = encode(&state);
        bytes[8] = 99;
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }
}
