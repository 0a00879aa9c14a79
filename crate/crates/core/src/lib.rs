//! Simulation and analysis toolkit for a balanced gated-mode photon detector
//! built from two InGaAs/InP avalanche photodiodes.
//!
//! The detector applies short gate pulses on top of a DC bias to both APDs and
//! subtracts their outputs in a 180° hybrid junction. The capacitive spikes from
//! the gate edges are common-mode and cancel, so the discriminator threshold can
//! sit far below the spike height. The sign of the differential pulse tells
//! which APD fired.
//!
//! Modules:
//! - [`device`]: per-APD efficiency, dark-count and afterpulse (trap) model.
//! - [`signalchain`]: sampled waveforms, spike synthesis, hybrid subtraction
//!   and sign-resolving discrimination.
//! - [`montecarlo`]: seeded gate-by-gate engine and the three experiments.
//! - [`estimator`]: Poisson-click maximum-likelihood fits and afterpulse analysis.
//! - [`linkbudget`]: QKD range and error-rate arithmetic.
//! - [`io`]: CSV/JSON artifact formats.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod device;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linkbudget;
pub mod montecarlo;
pub mod signalchain;

pub use error::{Error, Result};
