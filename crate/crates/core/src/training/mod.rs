//! Episodic, MAML+X and L2G trainers.
//!
//! A bilevel step adapts every parameter with one SGD step on the first
//! episode of a pair and scores the adapted parameters on the second. The
//! meta-gradient flows through that step exactly, or treats the inner
//! gradient as a constant in first-order mode.

mod checkpoint;
mod config;
mod log;
mod optim;
mod step;
mod trainer;

pub use checkpoint::{tensors_from_bytes, tensors_to_bytes};
pub use config::{AdamHyper, GradMode, Mode, OptimizerKind, Reduction, TrainerConfig};
pub use log::{LogRecord, RunLog, LOG_HEADER};
pub use optim::{adam_update, lr_schedule, sgd_update, AdamState, Optimizer};
pub use step::{episodic_step, inner_update, maml_x_step, meta_loss, meta_step, StepLosses, TrainState};
pub(crate) use step::{bilevel_losses, inner_update_signed};
pub use trainer::{checkpoint_name, train, Trainer, FINAL_CHECKPOINT, LOG_FILE};

#[cfg(test)]
mod tests;
