//! Noise spectra: analytic models, tabulated spectra, spectral decomposition
//! of coherence data and the energy-resolution noise line.
//!
//! Spectra follow the normalization of [`crate::dd`]: `⟨b²⟩ = ∫₀^∞ S dω/π`,
//! with S in T²·s (written T²/Hz in files).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{GAMMA_E, HBAR, MU_0};
use crate::dd::{CoherenceCurve, CoherencePoint, DdSequence};
use crate::error::{ensure_positive, Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};

/// A noise power spectral density `S(ω)`, ω in rad/s.
pub trait SpectralDensity: Sync {
    fn density(&self, omega: f64) -> f64;

    /// Frequencies where the spectrum has sharp structure (quadrature breakpoints).
    fn features(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// White noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flat {
    pub level: f64,
}

impl Flat {
    pub fn new(level: f64) -> Self {
        Flat { level }
    }
}

impl SpectralDensity for Flat {
    fn density(&self, _omega: f64) -> f64 {
        self.level
    }
}

/// `S_max Γ² / (Γ² + (ω − ω_c)²)`.
///
/// Centered at zero this is an Ornstein–Uhlenbeck field with correlation time
/// `1/Γ` and variance `S_max Γ / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorentzian {
    pub s_max: f64,
    /// Half width at half maximum (rad/s).
    pub gamma: f64,
    /// rad/s
    pub center: f64,
}

impl Lorentzian {
    pub fn new(s_max: f64, gamma: f64, center: f64) -> Self {
        Lorentzian {
            s_max,
            gamma,
            center,
        }
    }

    pub fn centered(s_max: f64, gamma: f64) -> Self {
        Self::new(s_max, gamma, 0.0)
    }

    /// Centered Lorentzian of an OU process with variance `sigma2` (T²) and
    /// correlation time `tau_c`.
    pub fn ornstein_uhlenbeck(sigma2: f64, tau_c: f64) -> Self {
        Self::centered(2.0 * sigma2 * tau_c, 1.0 / tau_c)
    }
}

impl SpectralDensity for Lorentzian {
    fn density(&self, omega: f64) -> f64 {
        let g2 = self.gamma * self.gamma;
        let d = omega - self.center;
        self.s_max * g2 / (g2 + d * d)
    }

    fn features(&self) -> Vec<f64> {
        [-4.0, -1.0, 0.0, 1.0, 4.0]
            .iter()
            .map(|k| self.center + k * self.gamma)
            .collect()
    }
}

/// Pointwise sum of spectra.
pub struct SumSpectrum(pub Vec<Box<dyn SpectralDensity + Send>>);

impl SpectralDensity for SumSpectrum {
    fn density(&self, omega: f64) -> f64 {
        self.0.iter().map(|s| s.density(omega)).sum()
    }

    fn features(&self) -> Vec<f64> {
        self.0.iter().flat_map(|s| s.features()).collect()
    }
}

impl<T: SpectralDensity + ?Sized> SpectralDensity for &T {
    fn density(&self, omega: f64) -> f64 {
        (**self).density(omega)
    }

    fn features(&self) -> Vec<f64> {
        (**self).features()
    }
}

/// Spectrum multiplied by a constant.
pub struct Scaled<S>(pub S, pub f64);

impl<S: SpectralDensity> SpectralDensity for Scaled<S> {
    fn density(&self, omega: f64) -> f64 {
        self.1 * self.0.density(omega)
    }

    fn features(&self) -> Vec<f64> {
        self.0.features()
    }
}

/// Power-law continuation `S(ω) = S_ref (ω/ω_ref)^(−alpha)` above the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawTail {
    pub omega_ref: f64,
    pub s_ref: f64,
    pub alpha: f64,
}

impl PowerLawTail {
    pub fn eval(&self, omega: f64) -> f64 {
        self.s_ref * (omega / self.omega_ref).powf(-self.alpha)
    }
}

/// Tabulated spectrum on a strictly increasing grid.
///
/// Between grid points S is interpolated linearly in log–log space; below
/// the grid it is held constant; above it follows a power law fitted to the
/// top decade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub omega: Vec<f64>,
    pub s: Vec<f64>,
    pub tail: PowerLawTail,
}

impl NoiseSpectrum {
    pub fn new(omega: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if omega.len() != s.len() {
            return Err(Error::Shape {
                expected: format!("{} spectrum values", omega.len()),
                found: s.len().to_string(),
            });
        }
        if omega.is_empty() {
            return Err(Error::Data("empty spectrum".into()));
        }
        if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Data("grid frequencies must be positive".into()));
        }
        if omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("grid must be strictly increasing".into()));
        }
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Data(
                "spectral density must be finite and non-negative".into(),
            ));
        }
        let tail = fit_tail(&omega, &s);
        Ok(NoiseSpectrum { omega, s, tail })
    }

    /// Sample an analytic spectrum on a grid.
    pub fn sample(model: &dyn SpectralDensity, omega: Vec<f64>) -> Result<Self> {
        let s = omega.iter().map(|&w| model.density(w)).collect();
        Self::new(omega, s)
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega_max(&self) -> f64 {
        self.omega[self.omega.len() - 1]
    }

    pub fn omega_min(&self) -> f64 {
        self.omega[0]
    }
}

fn fit_tail(omega: &[f64], s: &[f64]) -> PowerLawTail {
    let n = omega.len();
    let top = omega[n - 1];
    let mut pts: Vec<(f64, f64)> = omega
        .iter()
        .zip(s)
        .filter(|(&w, &v)| w >= top / 10.0 && v > 0.0)
        .map(|(&w, &v)| (w.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        pts = omega
            .iter()
            .zip(s)
            .rev()
            .filter(|(_, &v)| v > 0.0)
            .take(2)
            .map(|(&w, &v)| (w.ln(), v.ln()))
            .collect();
    }
    let s_last = s[n - 1];
    if pts.len() < 2 {
        return PowerLawTail {
            omega_ref: top,
            s_ref: s_last,
            alpha: 0.0,
        };
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let alpha = (-slope).max(0.0);
    // Anchor the fitted line at the top grid point.
    let s_ref = (my + (-alpha) * (top.ln() - mx)).exp();
    PowerLawTail {
        omega_ref: top,
        s_ref,
        alpha,
    }
}

impl SpectralDensity for NoiseSpectrum {
    fn density(&self, omega: f64) -> f64 {
        let n = self.omega.len();
        if omega <= self.omega[0] {
            return self.s[0];
        }
        if omega >= self.omega[n - 1] {
            return self.tail.eval(omega);
        }
        let i = self.omega.partition_point(|&w| w <= omega) - 1;
        let (w0, w1) = (self.omega[i], self.omega[i + 1]);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        if s0 > 0.0 && s1 > 0.0 {
            let f = (omega / w0).ln() / (w1 / w0).ln();
            (s0.ln() + f * (s1 / s0).ln()).exp()
        } else {
            s0 + (s1 - s0) * (omega - w0) / (w1 - w0)
        }
    }

    fn features(&self) -> Vec<f64> {
        self.omega.clone()
    }
}

/// First-harmonic estimate `S₀(ω₀) = −2 ln C / (γ² T)` at `ω₀ = πN/T`.
pub fn spectrum_zeroth(coherence: f64, seq: &DdSequence) -> Result<(f64, f64)> {
    spectrum_zeroth_with_gamma(coherence, seq, GAMMA_E)
}

pub fn spectrum_zeroth_with_gamma(
    coherence: f64,
    seq: &DdSequence,
    gamma: f64,
) -> Result<(f64, f64)> {
    if seq.n_pulses == 0 {
        return Err(Error::parameter(
            "n_pulses",
            "free evolution has no passband",
        ));
    }
    if !(coherence > 0.0) || !coherence.is_finite() {
        return Err(Error::Domain(format!(
            "coherence must be positive for spectral decomposition, got {coherence}"
        )));
    }
    let c = coherence.min(1.0);
    let s0 = -2.0 * c.ln() / (gamma * gamma * seq.total_time);
    Ok((seq.omega0(), s0.max(0.0)))
}

/// Zeroth-order estimates for every point of every curve, merged on one grid.
///
/// Points with `C ≤ 0` carry no phase information and are skipped; points at
/// identical ω₀ are averaged. Returns the spectrum and the number of skipped
/// points.
pub fn zeroth_spectrum(curves: &[CoherenceCurve]) -> Result<(NoiseSpectrum, usize)> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut skipped = 0;
    for curve in curves {
        for p in &curve.points {
            let seq = curve.sequence.at_time(p.time_s)?;
            match spectrum_zeroth(p.coherence, &seq) {
                Ok(v) => pts.push(v),
                Err(Error::Domain(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::Data("no usable coherence points".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut omega: Vec<f64> = Vec::new();
    let mut s: Vec<f64> = Vec::new();
    let mut count: Vec<f64> = Vec::new();
    for (w, v) in pts {
        match omega.last() {
            Some(&last) if (w - last).abs() <= 1e-12 * w => {
                let k = s.len() - 1;
                s[k] += v;
                count[k] += 1.0;
            }
            _ => {
                omega.push(w);
                s.push(v);
                count.push(1.0);
            }
        }
    }
    for (v, c) in s.iter_mut().zip(&count) {
        *v /= c;
    }
    Ok((NoiseSpectrum::new(omega, s)?, skipped))
}

#[derive(Debug, Clone, Copy)]
pub struct IterateOptions {
    pub max_iterations: usize,
    /// Converged when the largest relative change falls to this level.
    pub tolerance: f64,
    /// Harmonics summed explicitly before the power-law remainder.
    pub k_max: usize,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions {
            max_iterations: 10,
            tolerance: 1e-3,
            k_max: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationReport {
    pub spectrum: NoiseSpectrum,
    pub iterations: usize,
    /// Largest relative change at each step.
    pub changes: Vec<f64>,
    pub converged: bool,
    /// Some harmonic fell above the measured grid and was extrapolated.
    pub extrapolated: bool,
}

/// `Σ_{k≥1} S((2k+1)ω₀)/(2k+1)²` and whether any term used extrapolation.
fn harmonic_sum(prev: &NoiseSpectrum, w0: f64, k_max: usize) -> (f64, bool) {
    let top = prev.omega_max();
    let mut sum = 0.0;
    let mut extrapolated = false;
    for k in 1..=k_max {
        let m = (2 * k + 1) as f64;
        let w = m * w0;
        if w > top * (1.0 + 1e-12) {
            extrapolated = true;
        }
        sum += prev.density(w) / (m * m);
    }
    // Remainder of a power-law tail: Σ_{k>K} (2k+1)^(−2−α) ≈ (2K+2)^(−1−α) / (2(1+α)).
    let m_end = (2 * k_max + 1) as f64;
    let alpha = if m_end * w0 > top {
        prev.tail.alpha
    } else {
        0.0
    };
    let s_end = prev.density(m_end * w0);
    let rem = s_end * m_end.powf(alpha) * (m_end + 1.0).powf(-1.0 - alpha) / (2.0 * (1.0 + alpha));
    (sum + rem, extrapolated)
}

/// One refinement step `S_n(ω₀) = π²/8·S₀(ω₀) − Σ_{k≥1} S_{n−1}((2k+1)ω₀)/(2k+1)²`,
/// evaluated on the grid of `s0`. Negative results are clipped to zero.
pub fn spectrum_iterate_step(
    s_prev: &dyn SpectralDensityGrid,
    s0: &NoiseSpectrum,
    k_max: usize,
) -> Result<(NoiseSpectrum, bool)> {
    let mut extrapolated = false;
    let values = s0
        .omega
        .iter()
        .zip(&s0.s)
        .map(|(&w, &v)| {
            let (sum, ext) = s_prev.harmonic_sum(w, k_max);
            extrapolated |= ext;
            (PI * PI / 8.0 * v - sum).max(0.0)
        })
        .collect();
    Ok((NoiseSpectrum::new(s0.omega.clone(), values)?, extrapolated))
}

/// Anything that can supply the harmonic sum of the refinement step.
pub trait SpectralDensityGrid {
    fn harmonic_sum(&self, w0: f64, k_max: usize) -> (f64, bool);
}

impl SpectralDensityGrid for NoiseSpectrum {
    fn harmonic_sum(&self, w0: f64, k_max: usize) -> (f64, bool) {
        harmonic_sum(self, w0, k_max)
    }
}

/// The zero spectrum, for starting the refinement from `S_prev = 0`.
pub struct ZeroSpectrum;

impl SpectralDensityGrid for ZeroSpectrum {
    fn harmonic_sum(&self, _w0: f64, _k_max: usize) -> (f64, bool) {
        (0.0, false)
    }
}

fn max_rel_change(a: &NoiseSpectrum, b: &NoiseSpectrum) -> f64 {
    let scale = b.s.iter().cloned().fold(0.0, f64::max);
    a.s.iter()
        .zip(&b.s)
        .map(|(&x, &y)| {
            let den = y.abs().max(1e-9 * scale);
            if den > 0.0 {
                (x - y).abs() / den
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Iterate from `S_prev = S₀` until converged or `opts.max_iterations` steps.
pub fn spectrum_iterate(s0: &NoiseSpectrum, opts: IterateOptions) -> Result<IterationReport> {
    let mut prev = s0.clone();
    let mut changes = Vec::new();
    let mut extrapolated = false;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let (next, ext) = spectrum_iterate_step(&prev, s0, opts.k_max)?;
        extrapolated |= ext;
        let change = max_rel_change(&next, &prev);
        changes.push(change);
        prev = next;
        if change <= opts.tolerance {
            converged = true;
            break;
        }
    }
    Ok(IterationReport {
        spectrum: prev,
        iterations: changes.len(),
        changes,
        converged,
        extrapolated,
    })
}

/// Spin-lattice relaxation envelope `exp(−(t/T₁)^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Envelope {
    pub t1: f64,
    pub stretch: f64,
}

impl T1Envelope {
    pub fn exponential(t1: f64) -> Self {
        T1Envelope { t1, stretch: 1.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.t1.is_infinite() {
            1.0
        } else {
            (-(t / self.t1).powf(self.stretch)).exp()
        }
    }
}

/// Divide out the relaxation envelope; result clipped to `[0, 1.05]`.
pub fn deduct_t1(curve: &CoherenceCurve, envelope: T1Envelope) -> Result<CoherenceCurve> {
    if !(envelope.t1 > 0.0) {
        return Err(Error::parameter("t1", "must be positive"));
    }
    let points = curve
        .points
        .iter()
        .map(|p| {
            let e = envelope.eval(p.time_s);
            CoherencePoint {
                time_s: p.time_s,
                coherence: (p.coherence / e).clamp(0.0, 1.05),
                sigma: p.sigma / e,
            }
        })
        .collect();
    CoherenceCurve::new(curve.sequence, points)
}

/// Result of a Lorentzian fit to a tabulated spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub s_max: f64,
    pub gamma: f64,
    pub center: f64,
    pub s_max_err: f64,
    pub gamma_err: f64,
    pub center_err: f64,
    pub centered: bool,
    /// Relative residuals `(model − S)/S` per grid point.
    pub residuals: Vec<f64>,
    /// The width ran off to well beyond the grid (spectrum is flat).
    pub unbounded_width: bool,
}

impl LorentzianFit {
    pub fn model(&self) -> Lorentzian {
        Lorentzian::new(self.s_max, self.gamma, self.center)
    }
}

/// Least-squares Lorentzian fit on relative residuals.
///
/// With `centered` the center is pinned at ω = 0.
pub fn fit_lorentzian(spec: &NoiseSpectrum, centered: bool) -> Result<LorentzianFit> {
    if spec.len() < 4 {
        return Err(Error::Data(format!(
            "Lorentzian fit needs at least 4 grid points, got {}",
            spec.len()
        )));
    }
    let pts: Vec<(f64, f64)> = spec
        .omega
        .iter()
        .zip(&spec.s)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&w, &s)| (w, s))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Degenerate(
            "fewer than 4 positive spectrum values".into(),
        ));
    }
    let (imax, &(wmax, smax)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    let c0 = if centered { 0.0 } else { wmax };
    // Half-maximum crossing on the high side of the peak.
    let half = pts[imax..]
        .iter()
        .find(|p| p.1 < 0.5 * smax)
        .map(|p| (p.0 - c0).abs())
        .unwrap_or(spec.omega_max() - c0.min(spec.omega_min()));
    let g0 = half.max(spec.omega_min() * 1e-3);
    let w_scale = spec.omega_max();
    let residual = |p: &[f64]| -> Vec<f64> {
        let s_max = p[0].exp() * smax;
        let g = p[1].exp() * g0;
        let c = if centered { 0.0 } else { p[2] * w_scale };
        pts.iter()
            .map(|&(w, s)| {
                let d = w - c;
                (s_max * g * g / (g * g + d * d) - s) / s
            })
            .collect()
    };
    let p0: Vec<f64> = if centered {
        vec![0.0, 0.0]
    } else {
        vec![0.0, 0.0, c0 / w_scale]
    };
    let opts = LmOptions {
        max_iterations: 2000,
        ..LmOptions::default()
    };
    let fit = levenberg_marquardt(residual, &p0, opts)?;
    let se = fit.std_errors();
    let s_max = fit.params[0].exp() * smax;
    let gamma = fit.params[1].exp() * g0;
    let span = spec.omega_max() - if centered { 0.0 } else { spec.omega_min() };
    Ok(LorentzianFit {
        s_max,
        gamma,
        center: if centered {
            0.0
        } else {
            fit.params[2] * w_scale
        },
        s_max_err: s_max * se[0],
        gamma_err: gamma * se[1],
        center_err: if centered { 0.0 } else { se[2] * w_scale },
        centered,
        residuals: fit.residuals,
        unbounded_width: gamma > 10.0 * span,
    })
}

/// ERL-constrained noise level `2μ₀ħ / (e l³)` (T²/Hz).
pub fn erl_noise_line(l_eff: f64) -> Result<f64> {
    ensure_positive("l_eff", l_eff)?;
    Ok(2.0 * MU_0 * HBAR / (std::f64::consts::E * l_eff.powi(3)))
}

/// Median spectral level over grid points at or above `f_min_hz`.
pub fn plateau_level(spec: &NoiseSpectrum, f_min_hz: f64) -> Result<f64> {
    let w_min = 2.0 * PI * f_min_hz;
    let mut v: Vec<f64> = spec
        .omega
        .iter()
        .zip(&spec.s)
        .filter(|(&w, _)| w >= w_min)
        .map(|(_, &s)| s)
        .collect();
    if v.is_empty() {
        return Err(Error::Data(format!(
            "spectrum grid has no points above {f_min_hz} Hz"
        )));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Margin of the high-frequency plateau below the ERL line, in dB.
pub fn erl_margin_db(spec: &NoiseSpectrum, l_eff: f64, f_min_hz: f64) -> Result<f64> {
    let line = erl_noise_line(l_eff)?;
    let plateau = plateau_level(spec, f_min_hz)?;
    if !(plateau > 0.0) {
        return Err(Error::Degenerate("plateau level is zero".into()));
    }
    Ok(crate::constants::power_db(line / plateau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::{coherence_from_spectrum, Family, ForwardOptions, SequenceDescriptor};
    use approx::assert_relative_eq;

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn zeroth_trivial_cases() {
        let seq = DdSequence::new(Family::Xy16, 16, 1e-3).unwrap();
        assert_eq!(spectrum_zeroth(1.0, &seq).unwrap().1, 0.0);
        let (w0, s0) = spectrum_zeroth((-0.5f64).exp(), &seq).unwrap();
        assert_relative_eq!(s0, 1.0 / (GAMMA_E * GAMMA_E * 1e-3), max_relative = 1e-12);
        assert_relative_eq!(w0, PI * 16.0 / 1e-3);
        assert!(matches!(spectrum_zeroth(0.0, &seq), Err(Error::Domain(_))));
        assert!(matches!(spectrum_zeroth(-0.1, &seq), Err(Error::Domain(_))));
    }

    #[test]
    fn naive_first_harmonic_estimate_overshoots_flat_truth() {
        // The comb closes on a flat spectrum, so S₀ equals the truth and the
        // uncorrected single-harmonic estimate π²/8·S₀ overshoots by π²/8.
        let truth = 2e-20;
        let seq = DdSequence::new(Family::Xy16, 64, 500e-6).unwrap();
        let c =
            coherence_from_spectrum(&Flat::new(truth), &seq, ForwardOptions::comb(20_000)).unwrap();
        let (_, s0) = spectrum_zeroth(c, &seq).unwrap();
        assert_relative_eq!(s0, truth, max_relative = 1e-4);
        let (s1, _) = spectrum_iterate_step(
            &ZeroSpectrum,
            &NoiseSpectrum::new(vec![seq.omega0()], vec![s0]).unwrap(),
            10,
        )
        .unwrap();
        assert_relative_eq!(s1.s[0] / truth, PI * PI / 8.0, max_relative = 1e-4);
    }

    #[test]
    fn zero_prev_gives_scaled_s0() {
        let s0 = NoiseSpectrum::new(vec![1e5, 2e5, 3e5], vec![1e-20, 2e-20, 3e-20]).unwrap();
        let (s1, _) = spectrum_iterate_step(&ZeroSpectrum, &s0, 100).unwrap();
        for (a, b) in s1.s.iter().zip(&s0.s) {
            assert_relative_eq!(*a, PI * PI / 8.0 * b, max_relative = 1e-14);
        }
    }

    #[test]
    fn flat_is_fixed_point() {
        let omega = log_grid(1e5, 1e7, 30);
        let s0 = NoiseSpectrum::new(omega.clone(), vec![3e-20; 30]).unwrap();
        let rep = spectrum_iterate(&s0, IterateOptions::default()).unwrap();
        for v in &rep.spectrum.s {
            assert_relative_eq!(*v, 3e-20, max_relative = 1e-3);
        }
        assert!(rep.converged);
        assert!(rep.extrapolated);
    }

    #[test]
    fn iteration_contracts_on_lorentzian() {
        let l = Lorentzian::centered(5e-19, 2.0 * PI * 30e3);
        let desc = SequenceDescriptor {
            family: Family::Xy16,
            n_pulses: 64,
        };
        let times = log_grid(40e-6, 2e-3, 25);
        let curve = crate::dd::simulate_curve(&l, desc, &times, ForwardOptions::comb(400)).unwrap();
        let (s0, _) = zeroth_spectrum(&[curve]).unwrap();
        let rep = spectrum_iterate(
            &s0,
            IterateOptions {
                tolerance: 0.0,
                max_iterations: 6,
                ..IterateOptions::default()
            },
        )
        .unwrap();
        for w in rep.changes.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", rep.changes);
        }
    }

    #[test]
    fn interpolation_is_exact_on_power_law() {
        let omega = log_grid(1e3, 1e6, 10);
        let s: Vec<f64> = omega.iter().map(|w| 1e-10 * w.powf(-1.5)).collect();
        let spec = NoiseSpectrum::new(omega, s).unwrap();
        for &w in &[2e3, 5.5e4, 9.9e5, 3e6, 1e8] {
            assert_relative_eq!(spec.density(w), 1e-10 * w.powf(-1.5), max_relative = 1e-9);
        }
        assert_relative_eq!(spec.tail.alpha, 1.5, max_relative = 1e-9);
    }

    #[test]
    fn rising_tail_is_clamped_flat() {
        let spec = NoiseSpectrum::new(vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(spec.tail.alpha, 0.0);
        assert!(spec.density(100.0) <= 4.0 + 1e-12);
    }

    #[test]
    fn deduct_t1_cases() {
        let desc = SequenceDescriptor {
            family: Family::Xy16,
            n_pulses: 16,
        };
        let t1 = 5e-3;
        let pts: Vec<CoherencePoint> = (1..10)
            .map(|i| {
                let t = i as f64 * 1e-3;
                CoherencePoint {
                    time_s: t,
                    coherence: (-t / t1).exp(),
                    sigma: 0.01,
                }
            })
            .collect();
        let curve = CoherenceCurve::new(desc, pts).unwrap();
        let same = deduct_t1(&curve, T1Envelope::exponential(f64::INFINITY)).unwrap();
        assert_eq!(same, curve);
        let flat = deduct_t1(&curve, T1Envelope::exponential(t1)).unwrap();
        for p in &flat.points {
            assert_relative_eq!(p.coherence, 1.0, max_relative = 1e-12);
            assert!(p.sigma >= 0.01);
        }
        assert!(deduct_t1(&curve, T1Envelope::exponential(0.0)).is_err());
    }

    #[test]
    fn lorentzian_fit_noiseless() {
        let truth = Lorentzian::new(4e-19, 2.0 * PI * 50e3, 2.0 * PI * 200e3);
        let spec =
            NoiseSpectrum::sample(&truth, log_grid(2.0 * PI * 20e3, 2.0 * PI * 2e6, 60)).unwrap();
        let fit = fit_lorentzian(&spec, false).unwrap();
        assert_relative_eq!(fit.s_max, truth.s_max, max_relative = 1e-3);
        assert_relative_eq!(fit.gamma, truth.gamma, max_relative = 1e-3);
        assert_relative_eq!(fit.center, truth.center, max_relative = 1e-3);
        assert!(!fit.unbounded_width);

        let truth = Lorentzian::centered(4e-19, 2.0 * PI * 50e3);
        let spec =
            NoiseSpectrum::sample(&truth, log_grid(2.0 * PI * 5e3, 2.0 * PI * 2e6, 40)).unwrap();
        let fit = fit_lorentzian(&spec, true).unwrap();
        assert_relative_eq!(fit.s_max, truth.s_max, max_relative = 1e-3);
        assert_relative_eq!(fit.gamma, truth.gamma, max_relative = 1e-3);
    }

    #[test]
    fn lorentzian_fit_flat_flags_unbounded_width() {
        let spec = NoiseSpectrum::new(log_grid(1e4, 1e6, 20), vec![1e-20; 20]).unwrap();
        let fit = fit_lorentzian(&spec, true).unwrap();
        assert!(fit.unbounded_width, "gamma = {}", fit.gamma);
    }

    #[test]
    fn erl_line_values() {
        let s = erl_noise_line(31.7e-9).unwrap();
        let direct = 2.0 * MU_0 * HBAR / (std::f64::consts::E * 31.7e-9f64.powi(3));
        assert_eq!(s, direct);
        assert_relative_eq!(s, 3.06e-18, max_relative = 0.01);
        assert_relative_eq!(s.sqrt(), 1.75e-9, max_relative = 0.01);
        assert_relative_eq!(
            erl_noise_line(63.4e-9).unwrap(),
            s / 8.0,
            max_relative = 1e-12
        );
        assert!(erl_noise_line(0.0).is_err());
    }

    #[test]
    fn margin_of_calibrated_plateau() {
        let line = erl_noise_line(31.7e-9).unwrap();
        let floor = line / 10f64.powf(2.16);
        let spec = NoiseSpectrum::new(log_grid(1e6, 1e8, 20), vec![floor; 20]).unwrap();
        assert_relative_eq!(
            erl_margin_db(&spec, 31.7e-9, 100e3).unwrap(),
            21.6,
            max_relative = 1e-12
        );
        assert_relative_eq!(10f64.powf(2.16), 144.5, max_relative = 1e-3);
    }
}
