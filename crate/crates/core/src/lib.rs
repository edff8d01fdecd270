//! Recurrent sequence-to-sequence forecasting in two flavours:
//!
//! - the traditional two-network predictor: an encoder cell folds the input
//!   window into a context state, a decoder cell is fed that context `k`
//!   times, and an affine head maps each decoder state to a prediction;
//! - the memoryless predictor: a single cell whose own predictions are fed
//!   back as inputs, carrying nothing but its current state.
//!
//! Alongside the models the crate provides exact BPTT gradients, Adam
//! training, the phase-modulated benchmark signals, the `E_p` error metric,
//! a checker/tuner for the equation tying the decoder to the encoder and
//! predictor, and the experiment commands behind the `mlseq` binary.

pub mod consistency;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod linalg;
pub mod nn;
pub mod signals;
pub mod train;

pub use error::{Error, Result};
