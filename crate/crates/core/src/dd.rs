//! Dynamical-decoupling sequences, filter functions and the forward map from
//! a noise spectrum to coherence.
//!
//! Conventions: pulses are instantaneous π rotations at `(j − ½)τ`,
//! `τ = T/N`. The toggling function `y(t) = ±1` flips sign at each pulse and
//! the filter is `F(ω) = |∫₀ᵀ y(t) e^{iωt} dt|²`. With a spectrum normalized
//! as `⟨b²⟩ = ∫₀^∞ S(ω) dω/π` the accumulated phase variance is
//! `Δφ² = γ² ∫₀^∞ S(ω) F(ω) dω/π` and `C = exp(−Δφ²/2)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::GAMMA_E;
use crate::error::{ensure_positive, Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::noise::SpectralDensity;
use crate::quad::{integrate_panels, QuadOptions};

/// Sequence family.
///
/// XY8 is `X Y X Y Y X Y X`; XY16 is XY8 followed by its phase-inverted copy
/// `X̄ Ȳ X̄ Ȳ Ȳ X̄ Ȳ X̄`. CPMG uses Y pulses throughout. `Free` is plain
/// free evolution (Ramsey, N = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Free,
    Cpmg,
    Xy8,
    Xy16,
}

impl Family {
    /// Pulse count granularity.
    pub fn block(self) -> usize {
        match self {
            Family::Free => 0,
            Family::Cpmg => 1,
            Family::Xy8 => 8,
            Family::Xy16 => 16,
        }
    }

    fn base_phases(self) -> &'static [f64] {
        const X: f64 = 0.0;
        const Y: f64 = PI / 2.0;
        const XB: f64 = PI;
        const YB: f64 = 3.0 * PI / 2.0;
        match self {
            Family::Free => &[],
            Family::Cpmg => &[Y],
            Family::Xy8 => &[X, Y, X, Y, Y, X, Y, X],
            Family::Xy16 => &[X, Y, X, Y, Y, X, Y, X, XB, YB, XB, YB, YB, XB, YB, XB],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Free => "FREE",
            Family::Cpmg => "CPMG",
            Family::Xy8 => "XY8",
            Family::Xy16 => "XY16",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FREE" | "RAMSEY" => Ok(Family::Free),
            "CPMG" => Ok(Family::Cpmg),
            "XY8" => Ok(Family::Xy8),
            "XY16" => Ok(Family::Xy16),
            other => Err(Error::parameter(
                "family",
                format!("unknown sequence family `{other}`"),
            )),
        }
    }
}

/// A dynamical-decoupling sequence of N π pulses over total time T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdSequence {
    pub family: Family,
    pub n_pulses: usize,
    pub total_time: f64,
}

impl DdSequence {
    pub fn new(family: Family, n_pulses: usize, total_time: f64) -> Result<Self> {
        ensure_positive("total_time", total_time)?;
        let ok = match family {
            Family::Free => n_pulses == 0,
            f => n_pulses > 0 && n_pulses % f.block() == 0,
        };
        if !ok {
            return Err(Error::parameter(
                "n_pulses",
                format!("{n_pulses} pulses is not valid for {family}"),
            ));
        }
        Ok(DdSequence {
            family,
            n_pulses,
            total_time,
        })
    }

    /// Sequence with inter-pulse spacing `tau` (total time `N τ`).
    pub fn with_spacing(family: Family, n_pulses: usize, tau: f64) -> Result<Self> {
        Self::new(family, n_pulses, n_pulses as f64 * tau)
    }

    pub fn free(total_time: f64) -> Result<Self> {
        Self::new(Family::Free, 0, total_time)
    }

    /// Same family and pulse count, different total time.
    pub fn at_time(&self, total_time: f64) -> Result<Self> {
        Self::new(self.family, self.n_pulses, total_time)
    }

    /// Inter-pulse spacing τ = T/N (T for free evolution).
    pub fn tau(&self) -> f64 {
        if self.n_pulses == 0 {
            self.total_time
        } else {
            self.total_time / self.n_pulses as f64
        }
    }

    /// Passband center ω₀ = πN/T (rad/s); zero for free evolution.
    pub fn omega0(&self) -> f64 {
        PI * self.n_pulses as f64 / self.total_time
    }

    pub fn pulse_times(&self) -> Vec<f64> {
        let tau = self.tau();
        (0..self.n_pulses).map(|j| (j as f64 + 0.5) * tau).collect()
    }

    /// Rotation-axis phase of each pulse.
    pub fn phases(&self) -> Vec<f64> {
        let base = self.family.base_phases();
        (0..self.n_pulses).map(|j| base[j % base.len()]).collect()
    }

    /// Constant-sign segments `(start, end, sign)` of the toggling function.
    pub fn toggling_segments(&self) -> Vec<(f64, f64, f64)> {
        let mut edges = vec![0.0];
        edges.extend(self.pulse_times());
        edges.push(self.total_time);
        edges
            .windows(2)
            .enumerate()
            .map(|(j, w)| (w[0], w[1], if j % 2 == 0 { 1.0 } else { -1.0 }))
            .collect()
    }

    /// Toggling function value at time t.
    pub fn toggling(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.total_time {
            return 0.0;
        }
        let flips = if self.n_pulses == 0 {
            0
        } else {
            ((t / self.tau() + 0.5).floor() as usize).min(self.n_pulses)
        };
        if flips % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn label(&self) -> String {
        match self.family {
            Family::Free => "FREE".into(),
            f => format!("{f}-{}", self.n_pulses),
        }
    }
}

/// Delta-comb approximation of a filter function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterFunction {
    pub omega0: f64,
    pub total_time: f64,
    /// `(ω_k, w_k)` with `F(ω) ≈ Σ w_k δ(ω − ω_k)`.
    pub harmonics: Vec<(f64, f64)>,
}

impl FilterFunction {
    /// `Σ w_k S(ω_k) / π`, i.e. `Δφ²/γ²` under the comb approximation.
    pub fn overlap(&self, spectrum: &dyn SpectralDensity) -> f64 {
        self.harmonics
            .iter()
            .map(|&(w, wt)| wt * spectrum.density(w))
            .sum::<f64>()
            / PI
    }
}

/// Weight of harmonic k relative to `2πT`: `4 / (π² (2k+1)²)`.
pub fn comb_weight(k: usize) -> f64 {
    let m = (2 * k + 1) as f64;
    4.0 / (PI * PI * m * m)
}

/// Delta-comb filter with harmonics `k = 0..=k_max` at `(2k+1)ω₀`, weights
/// `2πT · 4/π² · 1/(2k+1)²`.
pub fn filter_delta_comb(seq: &DdSequence, k_max: usize) -> Result<FilterFunction> {
    if seq.n_pulses == 0 {
        return Err(Error::parameter(
            "n_pulses",
            "free evolution has no passband; use the exact filter",
        ));
    }
    let w0 = seq.omega0();
    let t = seq.total_time;
    Ok(FilterFunction {
        omega0: w0,
        total_time: t,
        harmonics: (0..=k_max)
            .map(|k| ((2 * k + 1) as f64 * w0, 2.0 * PI * t * comb_weight(k)))
            .collect(),
    })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `F(ω)` by direct summation over toggling segments.
pub fn exact_filter_direct(seq: &DdSequence, omega: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (a, b, s) in seq.toggling_segments() {
        let len = b - a;
        let amp = s * len * sinc(0.5 * omega * len);
        let (sn, cs) = (0.5 * omega * (a + b)).sin_cos();
        re += amp * cs;
        im += amp * sn;
    }
    re * re + im * im
}

/// Exact filter `|ỹ(ω)|²` for ideal instantaneous pulses.
pub fn exact_filter(seq: &DdSequence, omega: f64) -> f64 {
    let omega = omega.abs();
    let t = seq.total_time;
    if seq.n_pulses == 0 {
        let s = t * sinc(0.5 * omega * t);
        return s * s;
    }
    let n = seq.n_pulses as f64;
    let tau = seq.tau();
    if omega * tau < 1e-3 {
        return exact_filter_direct(seq, omega);
    }
    // F = 16/ω² sin⁴(ωτ/4) [sin(Nε)/sin(ε)]², ε = ωτ/2 reduced to (−π/2, π/2]
    // around the nearest odd multiple of π/2.
    let x = 0.5 * omega * tau;
    let m = ((x - 0.5 * PI) / PI).round();
    let eps = x - 0.5 * PI - m * PI;
    let ratio = if eps.abs() < 1e-12 {
        n
    } else {
        (n * eps).sin() / eps.sin()
    };
    let s4 = (0.25 * omega * tau).sin().powi(4);
    16.0 / (omega * omega) * s4 * ratio * ratio
}

/// How the filter is represented during the spectrum overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMethod {
    Exact,
    Comb,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub method: FilterMethod,
    /// Harmonics `0..=k_max` are integrated explicitly; the rest form the tail.
    pub k_max: usize,
    pub rel_tol: f64,
    /// Tail-to-body ratio above which the integral is declared divergent.
    pub max_tail_fraction: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            method: FilterMethod::Exact,
            k_max: 10,
            rel_tol: 1e-8,
            max_tail_fraction: 0.25,
        }
    }
}

impl ForwardOptions {
    pub fn comb(k_max: usize) -> Self {
        ForwardOptions {
            method: FilterMethod::Comb,
            k_max,
            ..Self::default()
        }
    }
}

/// Result of the spectrum → coherence map with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceEval {
    pub coherence: f64,
    pub phase_variance: f64,
    /// Quadrature error estimate on `Δφ²` (zero for the comb method).
    pub quad_error: f64,
    /// Estimated `Δφ²` contribution above the integration cutoff (already added).
    pub tail: f64,
    pub omega_cutoff: f64,
}

fn checked_density(spectrum: &dyn SpectralDensity, omega: f64) -> f64 {
    let s = spectrum.density(omega);
    if s.is_finite() && s >= 0.0 {
        s
    } else {
        f64::NAN
    }
}

/// Comb estimate of `∫_{cutoff}^∞ S F dω/π` from harmonics above `k_max`
/// (so `2T·4/π²` per unit weight, the 1/π already applied).
fn comb_tail(spectrum: &dyn SpectralDensity, seq: &DdSequence, k_max: usize) -> f64 {
    let w0 = seq.omega0();
    let t = seq.total_time;
    let k_end = 64 * (k_max + 1);
    let mut sum = 0.0;
    for k in k_max + 1..=k_end {
        sum += 2.0 * t * comb_weight(k) * checked_density(spectrum, (2 * k + 1) as f64 * w0);
    }
    // Remaining harmonics at the last sampled level: Σ_{k>K} 1/(2k+1)² ≈ 1/(4K+4).
    let last = checked_density(spectrum, (2 * k_end + 1) as f64 * w0);
    sum + 2.0 * t * 4.0 / (PI * PI) * last / (4.0 * k_end as f64 + 4.0)
}

/// `Δφ²/γ² = ∫₀^∞ S F dω/π` with the exact filter, plus diagnostics.
fn exact_overlap(
    spectrum: &dyn SpectralDensity,
    seq: &DdSequence,
    opts: &ForwardOptions,
) -> Result<(f64, f64, f64, f64)> {
    let t = seq.total_time;
    let panel = PI / t;
    let f = |w: f64| checked_density(spectrum, w) * exact_filter(seq, w);
    let (cutoff, n_panels) = if seq.n_pulses == 0 {
        // sinc² envelope: integrate to 400 lobes, tail bounded by 4/ω² decay.
        (400.0 * panel, 400)
    } else {
        let cutoff = (2 * opts.k_max + 2) as f64 * seq.omega0();
        (cutoff, (2 * opts.k_max + 2) * seq.n_pulses)
    };
    // Absolute floor: 1e-12 rad² of electron phase variance over all panels.
    let quad = QuadOptions {
        abs_tol: PI * 1e-12 / (GAMMA_E * GAMMA_E * n_panels as f64),
        rel_tol: opts.rel_tol,
        max_intervals: 200,
    };
    let mut breaks: Vec<f64> = (0..=n_panels).map(|i| i as f64 * panel).collect();
    let mut extra = spectrum.features();
    extra.retain(|&w| w > 0.0 && w < cutoff);
    breaks.extend(extra);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let body = integrate_panels(f, &breaks, quad)?;
    let tail = if seq.n_pulses == 0 {
        // ∫_W^∞ S · 4/ω² dω/π with S evaluated at W (upper estimate for decaying S).
        checked_density(spectrum, cutoff) * 4.0 / (PI * cutoff)
    } else {
        // Harmonics below the cutoff are integrated; start the comb tail above it.
        comb_tail(spectrum, seq, opts.k_max)
    };
    Ok((body.value / PI, body.error / PI, tail, cutoff))
}

/// Spectrum → coherence with diagnostics (`γ = γ_e` by default).
pub fn coherence_eval(
    spectrum: &dyn SpectralDensity,
    seq: &DdSequence,
    opts: ForwardOptions,
) -> Result<CoherenceEval> {
    coherence_eval_with_gamma(spectrum, seq, opts, GAMMA_E)
}

pub fn coherence_eval_with_gamma(
    spectrum: &dyn SpectralDensity,
    seq: &DdSequence,
    opts: ForwardOptions,
    gamma: f64,
) -> Result<CoherenceEval> {
    let (body, err, tail, cutoff) = match opts.method {
        FilterMethod::Exact => exact_overlap(spectrum, seq, &opts)?,
        FilterMethod::Comb => {
            let comb = filter_delta_comb(seq, opts.k_max)?;
            let body = comb.overlap(spectrum);
            let tail = comb_tail(spectrum, seq, opts.k_max);
            (body, 0.0, tail, comb.harmonics.last().map_or(0.0, |h| h.0))
        }
    };
    if !body.is_finite() || !tail.is_finite() {
        return Err(Error::Integration(format!(
            "spectrum overlap not finite for {} at T = {:e} s (body {body:e}, tail {tail:e})",
            seq.label(),
            seq.total_time
        )));
    }
    if body > 0.0 && tail > opts.max_tail_fraction * body {
        return Err(Error::Integration(format!(
            "spectrum overlap appears divergent for {} at T = {:e} s: tail estimate {tail:e} vs body {body:e} above cutoff {cutoff:e} rad/s",
            seq.label(),
            seq.total_time
        )));
    }
    let var = gamma * gamma * (body + tail);
    Ok(CoherenceEval {
        coherence: (-0.5 * var).exp(),
        phase_variance: var,
        quad_error: gamma * gamma * err,
        tail: gamma * gamma * tail,
        omega_cutoff: cutoff,
    })
}

/// `C = exp(−Δφ²/2)` for the sequence under the given spectrum.
pub fn coherence_from_spectrum(
    spectrum: &dyn SpectralDensity,
    seq: &DdSequence,
    opts: ForwardOptions,
) -> Result<f64> {
    coherence_eval(spectrum, seq, opts).map(|e| e.coherence)
}

/// One sample of a coherence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherencePoint {
    pub time_s: f64,
    pub coherence: f64,
    pub sigma: f64,
}

/// Family and pulse count shared by every point of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDescriptor {
    pub family: Family,
    #[serde(rename = "N")]
    pub n_pulses: usize,
}

impl SequenceDescriptor {
    pub fn at_time(&self, total_time: f64) -> Result<DdSequence> {
        DdSequence::new(self.family, self.n_pulses, total_time)
    }
}

/// Coherence versus total evolution time for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub sequence: SequenceDescriptor,
    pub points: Vec<CoherencePoint>,
}

impl CoherenceCurve {
    pub fn new(sequence: SequenceDescriptor, points: Vec<CoherencePoint>) -> Result<Self> {
        let c = CoherenceCurve { sequence, points };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !(p.time_s.is_finite() && p.time_s > 0.0) {
                return Err(Error::Data(format!("invalid time {}", p.time_s)));
            }
            if !(-0.05..=1.05).contains(&p.coherence) {
                return Err(Error::Data(format!(
                    "coherence {} at t = {} outside [-0.05, 1.05]",
                    p.coherence, p.time_s
                )));
            }
            if !(p.sigma.is_finite() && p.sigma >= 0.0) {
                return Err(Error::Data(format!("invalid sigma {}", p.sigma)));
            }
        }
        if self.points.windows(2).any(|w| w[1].time_s <= w[0].time_s) {
            return Err(Error::Data("times must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.time_s).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coherence).collect()
    }
}

/// Forward-model a curve on the given time grid (noiseless, σ = 0).
pub fn simulate_curve(
    spectrum: &dyn SpectralDensity,
    sequence: SequenceDescriptor,
    times: &[f64],
    opts: ForwardOptions,
) -> Result<CoherenceCurve> {
    let points = times
        .par_iter()
        .map(|&t| {
            let seq = sequence.at_time(t)?;
            Ok(CoherencePoint {
                time_s: t,
                coherence: coherence_from_spectrum(spectrum, &seq, opts)?,
                sigma: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CoherenceCurve::new(sequence, points)
}

/// Stretched-exponential decay `A exp(−(t/T₂)^p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StretchedExpFit {
    pub amplitude: f64,
    pub t2: f64,
    pub stretch: f64,
    pub amplitude_err: f64,
    pub t2_err: f64,
    pub stretch_err: f64,
    /// Row-major 3×3 covariance of `(amplitude, t2, stretch)`.
    pub covariance: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl StretchedExpFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-(t / self.t2).powf(self.stretch)).exp()
    }
}

fn initial_t2(times: &[f64], values: &[f64], amplitude: f64) -> f64 {
    let target = amplitude / std::f64::consts::E;
    for w in 0..times.len().saturating_sub(1) {
        let (c0, c1) = (values[w], values[w + 1]);
        if c0 >= target && c1 < target {
            let f = (c0 - target) / (c0 - c1);
            return times[w] + f * (times[w + 1] - times[w]);
        }
    }
    // Never crossed 1/e: extrapolate a simple exponential through the last point.
    let (t, c) = (times[times.len() - 1], values[values.len() - 1]);
    let r = (c / amplitude).clamp(1e-6, 1.0 - 1e-6);
    t / (-r.ln())
}

/// Least-squares fit of `A exp(−(t/T₂)^p)`, weighted by σ when all σ > 0.
pub fn fit_stretched_exponential(curve: &CoherenceCurve) -> Result<StretchedExpFit> {
    if curve.points.len() < 4 {
        return Err(Error::Data(format!(
            "stretched-exponential fit needs at least 4 points, got {}",
            curve.points.len()
        )));
    }
    let t = curve.times();
    let c = curve.values();
    let weighted = curve.points.iter().all(|p| p.sigma > 0.0);
    let w: Vec<f64> = curve
        .points
        .iter()
        .map(|p| if weighted { 1.0 / p.sigma } else { 1.0 })
        .collect();
    let a0 = c.iter().cloned().fold(f64::MIN, f64::max).max(1e-3);
    let t2_0 = initial_t2(&t, &c, a0);
    let scale = t2_0;
    // Optimize (A, T₂/scale, p) so the parameters are all O(1).
    let residuals = |p: &[f64]| -> Vec<f64> {
        if p[1] <= 0.0 || p[2] <= 0.0 {
            return vec![f64::NAN; t.len()];
        }
        t.iter()
            .zip(&c)
            .zip(&w)
            .map(|((&ti, &ci), &wi)| (p[0] * (-(ti / (p[1] * scale)).powf(p[2])).exp() - ci) * wi)
            .collect()
    };
    let opts = LmOptions {
        scale_covariance: !weighted,
        ..LmOptions::default()
    };
    let fit = levenberg_marquardt(residuals, &[a0, 1.0, 1.0], opts)?;
    let s = [1.0, scale, 1.0];
    let mut cov = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            cov[3 * i + j] = fit.covariance[(i, j)] * s[i] * s[j];
        }
    }
    Ok(StretchedExpFit {
        amplitude: fit.params[0],
        t2: fit.params[1] * scale,
        stretch: fit.params[2],
        amplitude_err: cov[0].max(0.0).sqrt(),
        t2_err: cov[4].max(0.0).sqrt(),
        stretch_err: cov[8].max(0.0).sqrt(),
        covariance: cov,
        chi2: fit.chi2,
        iterations: fit.iterations,
    })
}

/// Per-curve stretched-exponential T₂ versus pulse count.
pub fn t2_scaling(curves: &[CoherenceCurve]) -> Result<Vec<(usize, StretchedExpFit)>> {
    if curves.is_empty() {
        return Err(Error::Data("no coherence curves supplied".into()));
    }
    curves
        .par_iter()
        .map(|c| Ok((c.sequence.n_pulses, fit_stretched_exponential(c)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{Flat, Lorentzian};
    use approx::assert_relative_eq;

    #[test]
    fn omega0_for_16_pulses_in_16_us() {
        let s = DdSequence::new(Family::Xy16, 16, 16e-6).unwrap();
        assert_relative_eq!(s.omega0() / (2.0 * PI), 500e3, max_relative = 1e-12);
    }

    #[test]
    fn block_validation() {
        assert!(DdSequence::new(Family::Xy8, 12, 1e-3).is_err());
        assert!(DdSequence::new(Family::Xy16, 8, 1e-3).is_err());
        assert!(DdSequence::new(Family::Cpmg, 0, 1e-3).is_err());
        assert!(DdSequence::new(Family::Cpmg, 3, 0.0).is_err());
        assert!(DdSequence::new(Family::Xy16, 512, 1.8e-3).is_ok());
    }

    #[test]
    fn xy16_phases() {
        let s = DdSequence::new(Family::Xy16, 32, 1e-3).unwrap();
        let p = s.phases();
        assert_eq!(p.len(), 32);
        for j in 0..8 {
            assert_relative_eq!(p[j + 8], p[j] + PI);
        }
        assert_eq!(p[16..], p[..16]);
        assert_eq!(&p[..4], &[0.0, PI / 2.0, 0.0, PI / 2.0]);
    }

    #[test]
    fn weight_ratio_is_one_ninth() {
        let f = filter_delta_comb(&DdSequence::new(Family::Cpmg, 8, 1e-4).unwrap(), 3).unwrap();
        assert_relative_eq!(
            f.harmonics[1].1 / f.harmonics[0].1,
            1.0 / 9.0,
            max_relative = 1e-14
        );
        assert!(f.harmonics.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn comb_total_weight_tends_to_one() {
        let s: f64 = (0..=10_000).map(|k| 2.0 * comb_weight(k)).sum();
        assert!((s - 1.0).abs() < 1e-3, "{s}");
    }

    #[test]
    fn closed_form_matches_direct_sum() {
        for &(fam, n) in &[
            (Family::Cpmg, 1),
            (Family::Cpmg, 7),
            (Family::Xy8, 8),
            (Family::Xy16, 64),
        ] {
            let s = DdSequence::new(fam, n, 10e-6 * n as f64).unwrap();
            for i in 0..4000 {
                let w = i as f64 * 0.0013 * s.omega0() + 1e-3;
                let a = exact_filter(&s, w);
                let b = exact_filter_direct(&s, w);
                let scale = s.total_time * s.total_time;
                assert!(
                    (a - b).abs() <= 1e-9 * scale,
                    "{fam} N={n} ω={w}: {a} vs {b}"
                );
            }
            // Exactly at the passband center.
            let w0 = s.omega0();
            assert_relative_eq!(
                exact_filter(&s, w0),
                exact_filter_direct(&s, w0),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn free_evolution_is_sinc_squared() {
        let s = DdSequence::free(2e-6).unwrap();
        assert_relative_eq!(exact_filter(&s, 0.0), 4e-12, max_relative = 1e-12);
        for i in 1..100 {
            assert!(exact_filter(&s, i as f64 * 1e5) <= exact_filter(&s, 0.0));
        }
    }

    #[test]
    fn cpmg_peak_at_passband_center() {
        let s = DdSequence::new(Family::Cpmg, 16, 32e-6).unwrap();
        let w0 = s.omega0();
        let (mut best_w, mut best) = (0.0, 0.0);
        for i in 1..40_000 {
            let w = i as f64 * 4.0 * w0 / 40_000.0;
            let f = exact_filter(&s, w);
            if f > best {
                best = f;
                best_w = w;
            }
        }
        // The 1/ω² envelope nudges the maximum slightly above ω₀.
        assert!((best_w - w0).abs() < 0.05 * 2.0 * PI / s.total_time);
        assert!(exact_filter(&s, w0) > 0.99 * best);
    }

    #[test]
    fn flat_spectrum_comb_vs_exact() {
        let flat = Flat::new(1e-20);
        for &n in &[16, 64, 512] {
            let s = DdSequence::new(Family::Xy16, n, 1e-3).unwrap();
            let exact = coherence_eval(&flat, &s, ForwardOptions::default()).unwrap();
            let comb = coherence_eval(&flat, &s, ForwardOptions::comb(10)).unwrap();
            let expected = GAMMA_E * GAMMA_E * 1e-20 * 1e-3;
            // Parseval: ∫ F dω/π = T.
            assert_relative_eq!(exact.phase_variance, expected, max_relative = 1e-3);
            assert!((comb.phase_variance / exact.phase_variance - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn zero_spectrum_gives_unit_coherence() {
        let s = DdSequence::new(Family::Xy8, 8, 1e-4).unwrap();
        let c = coherence_from_spectrum(&Flat::new(0.0), &s, ForwardOptions::default()).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn doubling_spectrum_doubles_log_coherence() {
        let s = DdSequence::new(Family::Xy16, 64, 400e-6).unwrap();
        let l = Lorentzian::centered(3e-19, 2.0 * PI * 20e3);
        let l2 = Lorentzian::centered(6e-19, 2.0 * PI * 20e3);
        let c1 = coherence_from_spectrum(&l, &s, ForwardOptions::default()).unwrap();
        let c2 = coherence_from_spectrum(&l2, &s, ForwardOptions::default()).unwrap();
        assert_relative_eq!(c2.ln(), 2.0 * c1.ln(), max_relative = 1e-9);
    }

    #[test]
    fn comb_matches_closed_form_sum() {
        let l = Lorentzian::centered(5e-19, 2.0 * PI * 10e3);
        let s = DdSequence::new(Family::Xy16, 512, 1.8e-3).unwrap();
        let got = coherence_eval(&l, &s, ForwardOptions::comb(200)).unwrap();
        let w0 = s.omega0();
        let mut sum = 0.0;
        for k in 0..=200usize {
            let m = (2 * k + 1) as f64;
            sum += l.density(m * w0) / (m * m);
        }
        let expected = GAMMA_E * GAMMA_E * s.total_time * 8.0 / (PI * PI) * sum;
        assert!((got.phase_variance / expected - 1.0).abs() < 1e-4);
    }

    #[test]
    fn growing_spectrum_is_integration_error() {
        struct Growing;
        impl SpectralDensity for Growing {
            fn density(&self, w: f64) -> f64 {
                1e-30 * w * w
            }
        }
        let s = DdSequence::new(Family::Cpmg, 4, 10e-6).unwrap();
        assert!(matches!(
            coherence_eval(&Growing, &s, ForwardOptions::default()),
            Err(Error::Integration(_))
        ));
    }

    fn synthetic(t2: f64, p: f64, times: &[f64]) -> CoherenceCurve {
        CoherenceCurve::new(
            SequenceDescriptor {
                family: Family::Xy16,
                n_pulses: 512,
            },
            times
                .iter()
                .map(|&t| CoherencePoint {
                    time_s: t,
                    coherence: (-(t / t2).powf(p)).exp(),
                    sigma: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stretched_fit_self_consistent() {
        let times: Vec<f64> = (1..=25).map(|i| i as f64 * 0.25e-3).collect();
        let fit = fit_stretched_exponential(&synthetic(2e-3, 1.0, &times)).unwrap();
        assert_relative_eq!(fit.t2, 2e-3, max_relative = 0.01);
        assert!((fit.stretch - 1.0).abs() < 0.05);
        assert_relative_eq!(fit.amplitude, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn stretched_fit_needs_four_points() {
        let fit = fit_stretched_exponential(&synthetic(2e-3, 1.0, &[1e-4, 2e-4, 3e-4]));
        assert!(matches!(fit, Err(Error::Data(_))));
    }

    #[test]
    fn t2_scaling_rejects_empty() {
        assert!(t2_scaling(&[]).is_err());
    }

    #[test]
    fn toggling_matches_segments() {
        let s = DdSequence::new(Family::Cpmg, 3, 3e-6).unwrap();
        for (a, b, sign) in s.toggling_segments() {
            assert_eq!(s.toggling(0.5 * (a + b)), sign);
        }
    }
}
