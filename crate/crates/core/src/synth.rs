//! Synthetic dataset generators with known ground truth.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dd::{
    coherence_from_spectrum, CoherenceCurve, CoherencePoint, DdSequence, Family, ForwardOptions,
    SequenceDescriptor,
};
use crate::depth::{
    proton_signal_coherence, DepthDataset, DepthPoint, DepthSidecar, ProtonBathModel, Sample,
    RHO_GLYCERINE, RHO_OIL,
};
use crate::error::{ensure_positive, Error, Result};
use crate::noise::{erl_margin_db, Flat, Lorentzian, NoiseSpectrum, SpectralDensity, SumSpectrum};

/// Effective sensing length of NV3 (m).
pub const NV3_L_EFF: f64 = 31.7e-9;
/// Margin of the NV3 noise plateau below the ERL line (dB).
pub const NV3_ERL_MARGIN_DB: f64 = 21.6;
/// Lower edge of the plateau band used for the margin (Hz).
pub const PLATEAU_F_MIN_HZ: f64 = 100e3;

/// Depths of the six characterized NVs (m) and their quoted 1σ (m).
pub const TABLE_DEPTHS: [(f64, f64); 6] = [
    (17.3e-9, 1.0e-9),
    (26.3e-9, 0.7e-9),
    (31.7e-9, 1.1e-9),
    (49.0e-9, 1.0e-9),
    (64.3e-9, 2.0e-9),
    (80.3e-9, 3.0e-9),
];

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Frequency grid (rad/s), log-spaced from `f_lo` to `f_hi` Hz.
pub fn log_omega_grid(f_lo: f64, f_hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 2.0 * PI * f_lo * (f_hi / f_lo).powf(i as f64 / (n.max(2) - 1) as f64))
        .collect()
}

/// Low-frequency Lorentzian plus a white floor, scaled so the plateau sits
/// `margin_db` below the ERL line for `l_eff`.
pub fn erl_calibrated_model(
    l_eff: f64,
    margin_db: f64,
    lorentz_peak_over_floor: f64,
    lorentz_hwhm_hz: f64,
) -> Result<SumSpectrum> {
    ensure_positive("l_eff", l_eff)?;
    let line = crate::noise::erl_noise_line(l_eff)?;
    let grid = plateau_grid();
    let build = |floor: f64| {
        SumSpectrum(vec![
            Box::new(Lorentzian::centered(
                lorentz_peak_over_floor * floor,
                2.0 * PI * lorentz_hwhm_hz,
            )),
            Box::new(Flat::new(floor)),
        ])
    };
    let mut floor = line / 10f64.powf(margin_db / 10.0);
    for _ in 0..4 {
        let spec = NoiseSpectrum::sample(&build(floor), grid.clone())?;
        let m = erl_margin_db(&spec, l_eff, PLATEAU_F_MIN_HZ)?;
        floor *= 10f64.powf((m - margin_db) / 10.0);
    }
    Ok(build(floor))
}

fn plateau_grid() -> Vec<f64> {
    log_omega_grid(1e3, 2e6, 80)
}

/// Noise model of NV3: 21.6 dB below the ERL line at 31.7 nm.
pub fn nv3_noise_model() -> Result<SumSpectrum> {
    erl_calibrated_model(NV3_L_EFF, NV3_ERL_MARGIN_DB, 50.0, 2e3)
}

/// NV3 model sampled on the standard plateau grid.
pub fn nv3_spectrum() -> Result<NoiseSpectrum> {
    NoiseSpectrum::sample(&nv3_noise_model()?, plateau_grid())
}

/// Total time at which the forward model gives coherence `target`.
pub fn time_for_coherence(
    spectrum: &dyn SpectralDensity,
    desc: SequenceDescriptor,
    target: f64,
    opts: ForwardOptions,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::parameter("target", "must lie in (0, 1)"));
    }
    let c_at =
        |t: f64| -> Result<f64> { coherence_from_spectrum(spectrum, &desc.at_time(t)?, opts) };
    let (mut lo, mut hi) = (1e-9, 1e-9);
    while c_at(hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Domain("coherence never reaches the target".into()));
        }
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if c_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-9 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Options for synthetic coherence bundles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    pub points_per_curve: usize,
    /// Coherence at the first time point.
    pub c_start: f64,
    /// Coherence at the last time point.
    pub c_end: f64,
    /// Additive Gaussian noise on every point.
    pub noise_sigma: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            points_per_curve: 12,
            c_start: 0.9,
            c_end: 0.15,
            noise_sigma: 0.0,
        }
    }
}

/// Coherence curves of one family for several pulse counts, each spanning
/// the configured coherence range.
pub fn coherence_bundle(
    spectrum: &(dyn SpectralDensity + Sync),
    family: Family,
    pulse_counts: &[usize],
    opts: BundleOptions,
    seed: u64,
) -> Result<Vec<CoherenceCurve>> {
    if opts.points_per_curve < 2 {
        return Err(Error::parameter("points_per_curve", "must be at least 2"));
    }
    let fwd = ForwardOptions::default();
    pulse_counts
        .par_iter()
        .enumerate()
        .map(|(ci, &n)| {
            let desc = SequenceDescriptor {
                family,
                n_pulses: n,
            };
            let t0 = time_for_coherence(spectrum, desc, opts.c_start, fwd)?;
            let t1 = time_for_coherence(spectrum, desc, opts.c_end, fwd)?;
            let m = opts.points_per_curve;
            let mut rng = stream_rng(seed, ci as u64);
            let noise = Normal::new(0.0, opts.noise_sigma.max(0.0))
                .map_err(|e| Error::parameter("noise_sigma", e.to_string()))?;
            let points = (0..m)
                .map(|i| {
                    let t = t0 * (t1 / t0).powf(i as f64 / (m - 1) as f64);
                    let c = coherence_from_spectrum(spectrum, &desc.at_time(t)?, fwd)?;
                    let noisy = if opts.noise_sigma > 0.0 {
                        c + noise.sample(&mut rng)
                    } else {
                        c
                    };
                    Ok(CoherencePoint {
                        time_s: t,
                        coherence: noisy.clamp(-0.05, 1.05),
                        sigma: opts.noise_sigma,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            CoherenceCurve::new(desc, points)
        })
        .collect()
}

/// Options for synthetic depth scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSynthOptions {
    pub b0_tesla: f64,
    pub t2n_star: f64,
    pub noise_sigma: f64,
    pub points: usize,
    /// Pulse count is the smallest power of two (≥ 16) whose dip reaches this.
    pub target_min_coherence: f64,
    pub sample: Sample,
}

impl Default for DepthSynthOptions {
    fn default() -> Self {
        DepthSynthOptions {
            b0_tesla: 0.1,
            t2n_star: 100e-6,
            noise_sigma: 0.01,
            points: 61,
            target_min_coherence: 0.4,
            sample: Sample::Glycerine,
        }
    }
}

/// Proton-dip scan of an XY16 sequence for an NV at `depth` (m).
pub fn depth_dataset(depth: f64, opts: DepthSynthOptions, seed: u64) -> Result<DepthDataset> {
    ensure_positive("noise_sigma", opts.noise_sigma)?;
    let rho = match opts.sample {
        Sample::Glycerine => RHO_GLYCERINE,
        Sample::Oil => RHO_OIL,
    };
    let model = ProtonBathModel::new(rho, depth, opts.t2n_star)?;
    let larmor = model.gamma_n.abs() * opts.b0_tesla;
    let tau0 = PI / larmor;
    let mut n = 16;
    loop {
        let c = proton_signal_coherence(&model, Family::Xy16, n, opts.b0_tesla, &[tau0])?[0];
        if c <= opts.target_min_coherence || n >= 1 << 20 {
            break;
        }
        n *= 2;
    }
    // Scan ± a few dip widths around the resonance.
    let seq = DdSequence::with_spacing(Family::Xy16, n, tau0)?;
    let rel_width =
        (1.0 / n as f64).max(model.linewidth() / larmor) + 2.0 * PI / (seq.total_time * larmor);
    let half = 4.0 * rel_width;
    let taus: Vec<f64> = (0..opts.points)
        .map(|i| tau0 * (1.0 - half + 2.0 * half * i as f64 / (opts.points - 1) as f64))
        .collect();
    let clean = proton_signal_coherence(&model, Family::Xy16, n, opts.b0_tesla, &taus)?;
    let mut rng = stream_rng(seed, 0);
    let noise = Normal::new(0.0, opts.noise_sigma)
        .map_err(|e| Error::parameter("noise_sigma", e.to_string()))?;
    let points = taus
        .iter()
        .zip(clean)
        .map(|(&tau_s, c)| DepthPoint {
            tau_s,
            coherence: c + noise.sample(&mut rng),
            sigma: opts.noise_sigma,
        })
        .collect();
    Ok(DepthDataset {
        sidecar: DepthSidecar {
            sequence: Family::Xy16,
            n_pulses: n,
            b0_tesla: opts.b0_tesla,
            sample: opts.sample,
            rho_per_nm3: rho * 1e-27,
            diffusion_m2_per_s: Some(model.diffusion),
        },
        points,
    })
}
