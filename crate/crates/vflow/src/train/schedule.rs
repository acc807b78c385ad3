//! Learning-rate schedules keyed off the global step counter.

/// Step-indexed learning rate. `step` is 1-based: the first optimizer
/// update is taken at step 1.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear ramp from 0 to `peak` over `warmup_steps`, flat until
    /// `hold_until`, then multiplied by `decay` per step with a floor.
    Ramp {
        peak: f64,
        warmup_steps: u64,
        hold_until: u64,
        decay: f64,
        floor: f64,
    },
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule::Constant { lr }
    }

    /// The long-run default: warm up to 1.2e-3 over 2000 steps, hold to
    /// step 50000, then decay by 0.99999 per step down to 3e-4.
    pub fn long_run() -> Self {
        LrSchedule::Ramp {
            peak: 1.2e-3,
            warmup_steps: 2000,
            hold_until: 50_000,
            decay: 0.99999,
            floor: 3e-4,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Ramp {
                peak,
                warmup_steps,
                hold_until,
                decay,
                floor,
            } => {
                if warmup_steps > 0 && step <= warmup_steps {
                    peak * step as f64 / warmup_steps as f64
                } else if step <= hold_until {
                    peak
                } else {
                    let exceeded = (step - hold_until) as f64;
                    (peak * decay.powf(exceeded)).max(floor)
                }
            }
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::constant(1e-3)
    }
}
