//! Modeling, simulation and analysis toolkit for single-spin NV-center
//! magnetometry.
//!
//! The crate is organized around the measurement chain of a shallow NV
//! center used as a nanoscale magnetometer:
//!
//! - [`spin`]: NV electron / nitrogen nuclear spin Hamiltonians and
//!   piecewise-constant propagation.
//! - [`pulse`]: GRAPE optimization of shaped π and π/2 pulses.
//! - [`dd`]: dynamical-decoupling sequences, filter functions and the
//!   spectrum → coherence forward map.
//! - [`noise`]: spectral decomposition of coherence data back into a noise
//!   spectrum, Lorentzian fits and the energy-resolution noise line.
//! - [`depth`]: proton-NMR depth determination.
//! - [`sensitivity`]: sensitivity budget, fringe calibration, time-series
//!   sensitivity and energy-resolution benchmarks.
//! - [`protocol`]: seeded Monte Carlo simulation of the measurement protocol.
//!
//! Support modules: [`fit`] (Levenberg-Marquardt), [`quad`] (adaptive
//! Gauss-Kronrod), [`io`] (file formats), [`manifest`] and [`synth`].

pub mod constants;
pub mod dd;
pub mod depth;
pub mod error;
pub mod fit;
pub mod io;
pub mod manifest;
pub mod noise;
pub mod protocol;
pub mod pulse;
pub mod quad;
pub mod sensitivity;
pub mod spin;
pub mod synth;

pub use error::{Error, Result};
