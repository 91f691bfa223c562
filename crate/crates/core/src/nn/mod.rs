//! Minimal dense-network engine: layers, losses, optimizer and gradient
//! verification. Everything runs in `f64`.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod loss;

pub use adam::{adam_step, adam_undo, AdamConfig, AdamState};
pub use dense::{sigmoid, Activation, Dense, DenseGrad, Stack};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, LayerSet};
pub use loss::{bce_batch, bce_loss, mse_batch, mse_loss, LossReport, BCE_CLAMP};
