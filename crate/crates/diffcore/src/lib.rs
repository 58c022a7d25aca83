//! Differentiable f64 computation: a dynamic tape with exact reverse-mode
//! gradients, an Adam optimizer, seeded splittable randomness, and a
//! finite-difference gradient checker.

mod adam;
mod check;
mod error;
mod nn;
mod param;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use check::{grad_check, EntryReport, GradCheckReport};
pub use error::DiffError;
pub use nn::{glorot_uniform, lstm_cell, LstmParams};
pub use param::{GradStore, ParamStore};
pub use rng::{gumbel_from_uniform, gumbel_noise, Rng};
pub use tape::{DTensor, Tape};
pub use tensor::Tensor;
