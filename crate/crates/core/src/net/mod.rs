//! Minimal neural-network substrate: MLPs, reverse-mode gradients, Adam.

mod adam;
mod mlp;

pub use adam::Adam;
pub use mlp::{grad, mse_loss, Mlp, MlpRecord, MlpTape};
