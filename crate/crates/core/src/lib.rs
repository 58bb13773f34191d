//! Simulation toolkit for OAM-multiplexed time-bin QKD over ring-core fiber.
//!
//! The signal chain runs star-coupler [`emitter`] → fiber [`channel`] →
//! receiver [`detection`], driven by the transmitter [`protocol`] and
//! analysed by the finite-key [`security`] bound. [`scenario`] wires the
//! pieces into the runs exposed by the `oamqkd` binary.

pub mod channel;
pub mod detection;
pub mod emitter;
pub mod protocol;
mod error;
pub mod scenario;
pub mod security;
pub mod seed;

pub use error::{Error, Result};
