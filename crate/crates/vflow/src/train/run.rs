//! The training loop: stochastic bound maximization with Adam, driven by a
//! single random stream so runs are reproducible and resumable.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamRegistry, VFlowModel};
use crate::numerics::Rng;
use crate::objective::{
    elbo_backward, elbo_discrete_backward, elbo_discrete_sample, elbo_sample,
    importance_log_likelihood_discrete, mean_importance_log_likelihood,
};
use crate::train::adam::Adam;
use crate::train::checkpoint;
use crate::train::schedule::LrSchedule;

/// Everything that evolves during a run. One `Rng` drives batch selection
/// and every stochastic draw inside the objective, so a run is a pure
/// function of (spec, seed) and can be checkpointed mid-stream.
#[derive(Debug)]
pub struct TrainState {
    pub spec: ModelSpec,
    pub model: VFlowModel,
    pub registry: ParamRegistry,
    pub opt: Adam,
    pub rng: Rng,
    /// Optimizer steps completed (skipped steps included).
    pub step: u64,
    /// Whether the density flow's actnorm layers saw their data-dependent
    /// initialization. The encoder and dequantizer keep identity actnorms.
    pub actnorm_initialized: bool,
}

impl TrainState {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = Rng::from_seed(seed);
        let model = spec.build(&mut rng)?;
        let registry = ParamRegistry::new(&model);
        let opt = Adam::new(registry.len());
        Ok(TrainState {
            spec,
            model,
            registry,
            opt,
            rng,
            step: 0,
            actnorm_initialized: false,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        checkpoint::load(path)
    }
}

/// Knobs for a run. `steps` is the absolute target for the step counter,
/// so training a loaded checkpoint further just raises it.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
    /// Train the dequantization bound instead of the continuous one.
    pub discrete: bool,
    /// Emit a log row every this many steps (0 = only the final row).
    pub log_every: u64,
    pub eval: Option<EvalConfig>,
}

/// Held-out evaluation attached to log rows: mean importance-sampled
/// log-likelihood over a fixed point set.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub points: Vec<Vec<f64>>,
    pub is_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 64,
            schedule: LrSchedule::default(),
            grad_clip: Some(100.0),
            discrete: false,
            log_every: 100,
            eval: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    /// Mean training bound over the most recent batch (nats).
    pub train_bound: f64,
    /// Held-out estimate, when an `EvalConfig` is set.
    pub eval_ll: Option<f64>,
    pub skipped: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps_done: u64,
    pub skipped: u64,
    pub last_bound: f64,
}

/// Run the optimizer until `state.step` reaches `cfg.steps`.
///
/// `next_batch` draws a batch of data points using the run's own stream;
/// `on_log` receives periodic rows for metrics output. Steps whose batch
/// produces a non-finite bound or gradient are skipped without an update;
/// more than 1% of the planned steps skipping aborts the run.
pub fn train_loop(
    state: &mut TrainState,
    cfg: &TrainConfig,
    next_batch: &mut dyn FnMut(&mut Rng, usize) -> Vec<Vec<f64>>,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig {
            msg: "batch_size must be positive".into(),
        });
    }
    if cfg.discrete && state.model.d_x() > 0 {
        state.model.require_r()?;
    }

    let planned = cfg.steps.saturating_sub(state.step);
    let allowed_skips = (planned / 100).max(1);

    if !state.actnorm_initialized {
        init_density_actnorms(state, cfg, next_batch)?;
        state.actnorm_initialized = true;
    }

    let mut flat = state.registry.gather(&state.model);
    let mut grad = vec![0.0; flat.len()];
    let mut skipped = 0u64;
    let mut last_bound = f64::NAN;

    while state.step < cfg.steps {
        let lr = cfg.schedule.lr(state.step + 1);
        let batch = next_batch(&mut state.rng, cfg.batch_size);
        if batch.is_empty() {
            return Err(Error::InvalidConfig {
                msg: "data source returned an empty batch".into(),
            });
        }

        grad.fill(0.0);
        let coeff = -1.0 / batch.len() as f64;
        let mut bound_sum = 0.0;
        let mut bad = false;
        for x in &batch {
            let res = step_objective(state, cfg.discrete, x, coeff, &mut grad);
            match res {
                Ok(bound) => bound_sum += bound,
                Err(e) if e.is_numeric() => {
                    bad = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let mean_bound = bound_sum / batch.len() as f64;
        if !bad {
            bad = !mean_bound.is_finite() || grad.iter().any(|g| !g.is_finite());
        }

        state.step += 1;
        if bad {
            skipped += 1;
            if skipped > allowed_skips {
                return Err(Error::TrainingAborted {
                    msg: format!(
                        "{skipped} of {planned} steps produced non-finite values"
                    ),
                });
            }
            continue;
        }

        if let Some(limit) = cfg.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                let scale = limit / norm;
                for g in grad.iter_mut() {
                    *g *= scale;
                }
            }
        }
        state.opt.step(lr, &mut flat, &grad)?;
        state.registry.scatter(&mut state.model, &flat)?;
        last_bound = mean_bound;

        let at_end = state.step == cfg.steps;
        let on_cadence = cfg.log_every > 0 && state.step % cfg.log_every == 0;
        if at_end || on_cadence {
            // Evaluation draws come from a stream derived from the step
            // index, leaving the training stream untouched so resumed
            // runs stay bit-identical.
            let eval_ll = match &cfg.eval {
                Some(ev) => Some(held_out_ll(state, cfg.discrete, ev)?),
                None => None,
            };
            on_log(&LogRow {
                step: state.step,
                lr,
                train_bound: mean_bound,
                eval_ll,
                skipped,
            });
        }
    }

    Ok(TrainReport {
        steps_done: state.step,
        skipped,
        last_bound,
    })
}

/// Accumulate one sample's gradient of the negative mean bound; returns
/// the sample's bound.
fn step_objective(
    state: &mut TrainState,
    discrete: bool,
    x: &[f64],
    coeff: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if discrete {
        let pass = elbo_discrete_sample(&state.model, x, &mut state.rng)?;
        elbo_discrete_backward(&state.model, x, &pass, coeff, &state.registry, grad)?;
        Ok(pass.bound)
    } else {
        let pass = elbo_sample(&state.model, x, &mut state.rng)?;
        elbo_backward(&state.model, x, &pass, coeff, &state.registry, grad)?;
        Ok(pass.elbo)
    }
}

fn held_out_ll(state: &TrainState, discrete: bool, ev: &EvalConfig) -> Result<f64> {
    let mut eval_rng = state.rng.child(state.step);
    if discrete {
        let mut total = 0.0;
        for x in &ev.points {
            total +=
                importance_log_likelihood_discrete(&state.model, x, ev.is_samples, &mut eval_rng)?;
        }
        Ok(total / ev.points.len() as f64)
    } else {
        mean_importance_log_likelihood(&state.model, &ev.points, ev.is_samples, &mut eval_rng)
    }
}

/// Give the density flow's actnorm layers a data-dependent start: run one
/// batch through the sampling paths to build joint points, then normalize
/// activations progressively through the stack.
fn init_density_actnorms(
    state: &mut TrainState,
    cfg: &TrainConfig,
    next_batch: &mut dyn FnMut(&mut Rng, usize) -> Vec<Vec<f64>>,
) -> Result<()> {
    let batch = next_batch(&mut state.rng, cfg.batch_size.max(2));
    let mut joint = Vec::with_capacity(batch.len());
    for x in &batch {
        let mut row = if cfg.discrete {
            let r = state.model.require_r()?;
            let u = r.sample(x, &mut state.rng)?;
            x.iter().zip(&u.value).map(|(a, b)| a + b).collect()
        } else {
            x.clone()
        };
        if state.model.d_z() > 0 {
            let q = state.model.require_q()?;
            let z = q.sample(&row, &mut state.rng)?;
            row.extend_from_slice(&z.value);
        }
        joint.push(row);
    }
    state.model.p.stack_mut().init_actnorms(&joint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Checkerboard;
    use crate::layers::Layer;
    use crate::model::spec::tests::toy_spec;
    use crate::objective::elbo_sample;

    fn board_batch(board: &Checkerboard) -> impl FnMut(&mut Rng, usize) -> Vec<Vec<f64>> + '_ {
        move |rng, n| board.sample_n(n, rng)
    }

    fn mean_elbo(state: &mut TrainState, points: &[Vec<f64>]) -> f64 {
        let mut rng = Rng::from_seed(991);
        let total: f64 = points
            .iter()
            .map(|x| elbo_sample(&state.model, x, &mut rng).unwrap().elbo)
            .sum();
        total / points.len() as f64
    }

    #[test]
    fn short_run_improves_the_bound() {
        let board = Checkerboard::new(2.0).unwrap();
        let mut state = TrainState::new(toy_spec(2, 2), 7).unwrap();
        let test_points = board.sample_n(128, &mut Rng::from_seed(40));

        let mut batcher = board_batch(&board);
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 32,
            log_every: 0,
            ..TrainConfig::default()
        };
        // Initialize actnorms (consumes a batch) before the baseline read.
        init_density_actnorms(&mut state, &cfg, &mut batcher).unwrap();
        state.actnorm_initialized = true;
        let before = mean_elbo(&mut state, &test_points);

        let report = train_loop(&mut state, &cfg, &mut batcher, &mut |_| {}).unwrap();
        assert_eq!(report.steps_done, 300);
        assert_eq!(report.skipped, 0);

        let after = mean_elbo(&mut state, &test_points);
        assert!(
            after > before + 0.1,
            "bound did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let board = Checkerboard::new(2.0).unwrap();
        let cfg_full = TrainConfig {
            steps: 24,
            batch_size: 8,
            log_every: 0,
            ..TrainConfig::default()
        };

        let mut straight = TrainState::new(toy_spec(2, 1), 11).unwrap();
        train_loop(
            &mut straight,
            &cfg_full,
            &mut board_batch(&board),
            &mut |_| {},
        )
        .unwrap();

        let mut halted = TrainState::new(toy_spec(2, 1), 11).unwrap();
        let cfg_half = TrainConfig {
            steps: 12,
            ..cfg_full.clone()
        };
        train_loop(
            &mut halted,
            &cfg_half,
            &mut board_batch(&board),
            &mut |_| {},
        )
        .unwrap();

        let dir = std::env::temp_dir().join("vflow_resume_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mid.ckpt");
        halted.save(&path).unwrap();
        let mut resumed = TrainState::load(&path).unwrap();
        std::fs::remove_file(&path).unwrap();

        train_loop(
            &mut resumed,
            &cfg_full,
            &mut board_batch(&board),
            &mut |_| {},
        )
        .unwrap();

        let a = straight.registry.gather(&straight.model);
        let b = resumed.registry.gather(&resumed.model);
        assert_eq!(a, b, "parameters diverged after resume");
        assert_eq!(straight.rng.state(), resumed.rng.state());
        assert_eq!(straight.step, resumed.step);
        assert_eq!(straight.opt.t(), resumed.opt.t());
    }

    #[test]
    fn non_finite_batches_skip_then_abort() {
        let mut state = TrainState::new(toy_spec(2, 1), 3).unwrap();
        state.actnorm_initialized = true;
        let before = state.registry.gather(&state.model);

        let cfg = TrainConfig {
            steps: 50,
            batch_size: 4,
            log_every: 0,
            ..TrainConfig::default()
        };
        let mut poisoned = |_: &mut Rng, n: usize| vec![vec![f64::NAN, 0.0]; n];
        let err = train_loop(&mut state, &cfg, &mut poisoned, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::TrainingAborted { .. }));

        // No update ever landed.
        let after = state.registry.gather(&state.model);
        assert_eq!(before, after);
        assert_eq!(state.opt.t(), 0);
    }

    #[test]
    fn occasional_bad_batch_is_tolerated() {
        let board = Checkerboard::new(2.0).unwrap();
        let mut state = TrainState::new(toy_spec(2, 1), 5).unwrap();
        let cfg = TrainConfig {
            steps: 120,
            batch_size: 8,
            log_every: 0,
            ..TrainConfig::default()
        };
        let mut calls = 0u64;
        let mut sometimes_bad = |rng: &mut Rng, n: usize| {
            calls += 1;
            if calls == 30 {
                vec![vec![f64::INFINITY, 0.0]; n]
            } else {
                board.sample_n(n, rng)
            }
        };
        let report = train_loop(&mut state, &cfg, &mut sometimes_bad, &mut |_| {}).unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.steps_done, 120);
    }

    #[test]
    fn actnorm_init_touches_only_the_density_flow() {
        let board = Checkerboard::new(2.0).unwrap();
        let mut state = TrainState::new(toy_spec(2, 2), 13).unwrap();
        // Zero steps: only the data-dependent initialization runs.
        let cfg = TrainConfig {
            steps: 0,
            batch_size: 32,
            log_every: 0,
            ..TrainConfig::default()
        };
        train_loop(&mut state, &cfg, &mut board_batch(&board), &mut |_| {}).unwrap();
        assert!(state.actnorm_initialized);

        let p_moved = state.model.p.stack().layers().iter().any(|l| match l {
            Layer::ActNorm(a) => a.log_scale().iter().any(|v| *v != 0.0),
            _ => false,
        });
        assert!(p_moved, "density-flow actnorms were not initialized");

        let q = state.model.require_q().unwrap();
        for l in q.stack().layers() {
            if let Layer::ActNorm(a) = l {
                assert!(a.log_scale().iter().all(|v| *v == 0.0));
                assert!(a.bias().iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn log_rows_follow_the_cadence() {
        let board = Checkerboard::new(2.0).unwrap();
        let mut state = TrainState::new(toy_spec(2, 1), 17).unwrap();
        let test_points = board.sample_n(8, &mut Rng::from_seed(4));
        let cfg = TrainConfig {
            steps: 10,
            batch_size: 8,
            log_every: 4,
            eval: Some(EvalConfig {
                points: test_points,
                is_samples: 4,
            }),
            ..TrainConfig::default()
        };
        let mut rows = Vec::new();
        train_loop(&mut state, &cfg, &mut board_batch(&board), &mut |row| {
            rows.push(row.clone())
        })
        .unwrap();
        let steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![4, 8, 10]);
        assert!(rows.iter().all(|r| r.eval_ll.unwrap().is_finite()));
        assert!(rows.iter().all(|r| r.train_bound.is_finite()));
    }
}
