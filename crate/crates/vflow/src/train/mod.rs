//! Optimization: Adam over the flat parameter vector, learning-rate
//! schedules, a deterministic training loop, and binary checkpoints that
//! resume runs bit-for-bit.

mod adam;
pub(crate) mod checkpoint;
mod run;
mod schedule;

pub use adam::Adam;
pub use checkpoint::{decode as decode_checkpoint, encode as encode_checkpoint};
pub use run::{train_loop, EvalConfig, LogRow, TrainConfig, TrainReport, TrainState};
pub use schedule::LrSchedule;
