//! Physical constants (SI units, angular frequencies in rad/s).

use std::f64::consts::PI;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Vacuum permeability (T m / A).
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Electron gyromagnetic ratio over 2π (Hz/T).
pub const GAMMA_E_HZ_PER_T: f64 = 28.024e9;

/// Electron gyromagnetic ratio (rad s⁻¹ T⁻¹).
pub const GAMMA_E: f64 = 2.0 * PI * GAMMA_E_HZ_PER_T;

/// ¹⁵N nuclear gyromagnetic ratio over 2π (Hz/T).
pub const GAMMA_N15_HZ_PER_T: f64 = -4.316e6;

/// ¹⁴N nuclear gyromagnetic ratio over 2π (Hz/T).
pub const GAMMA_N14_HZ_PER_T: f64 = 3.077e6;

/// ¹H gyromagnetic ratio over 2π (Hz/T).
pub const GAMMA_PROTON_HZ_PER_T: f64 = 42.577_478e6;

/// ¹H gyromagnetic ratio (rad s⁻¹ T⁻¹).
pub const GAMMA_PROTON: f64 = 2.0 * PI * GAMMA_PROTON_HZ_PER_T;

/// Ground-state zero-field splitting of NV⁻ (Hz).
pub const ZERO_FIELD_SPLITTING_HZ: f64 = 2.870e9;

/// Longitudinal ¹⁵N hyperfine coupling (Hz).
pub const HYPERFINE_PARALLEL_HZ: f64 = 3.03e6;

/// Static field along the NV axis used for sensing (T).
pub const SENSING_FIELD_T: f64 = 0.7662;

/// Converts a frequency in Hz to an angular frequency in rad/s.
#[inline]
pub fn hz_to_rad(hz: f64) -> f64 {
    2.0 * PI * hz
}

/// Converts an angular frequency in rad/s to Hz.
#[inline]
pub fn rad_to_hz(rad: f64) -> f64 {
    rad / (2.0 * PI)
}

/// Power ratio in decibels.
#[inline]
pub fn power_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}
