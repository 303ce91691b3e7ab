//! Desk-scale simulator and analysis toolkit for parametric feedback
//! cooling of a levitated rotor's libration modes.
//!
//! The crate reproduces the measurement-and-control pipeline of a
//! libration-cooling experiment end to end:
//!
//! - [`physics`] — constants, mode/environment parameters, closed-form
//!   relations (gas damping, fluctuation-dissipation, phonon occupation,
//!   cooling limit).
//! - [`dynamics`] — stochastic integration of parametrically driven
//!   underdamped oscillators sharing one actuator.
//! - [`detection`] — angle-to-voltage mapping with imprecision noise and
//!   the imprecision-backaction efficiency bookkeeping.
//! - [`feedback`] — per-mode digital PLLs, 2Ω parametric signal synthesis,
//!   actuator summation and scheduling.
//! - [`analysis`] — Welch PSD estimation, peak thermometry, equipartition
//!   calibration, lock-in demodulation, linear fits.
//! - [`experiments`] — orchestrated protocols: cooling sweep, reheating,
//!   heating-vs-pressure, measurement-efficiency estimation.
//! - [`config`] / [`io`] / [`cli`] — declarative run configuration,
//!   deterministic persistence, command-line entry points.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod io;
pub mod physics;
pub mod rng;

pub use error::{Error, Result};
