//! Function-encoder neural ODE: a learned basis of vector fields whose
//! linear span covers the terrain family.

pub mod basis;
pub mod gram;
pub mod train;

pub use basis::{combine, solve_coefficients, BasisSet, Coefficients, TransitionBatch};
pub use gram::{gram_from_increments, solve_alpha, GramSystem, InnerProduct, Regularization};
pub use train::{fit_and_score, loss_and_grad, train, LossRecord, MinibatchStream, StepBatch, TrainConfig, ValidationSet};
