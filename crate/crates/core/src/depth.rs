//! NV depth from the proton NMR signal of an immersion sample.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{GAMMA_E, GAMMA_PROTON, HBAR, MU_0};
use crate::dd::{exact_filter, DdSequence, Family};
use crate::error::{ensure_positive, Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::quad::{integrate_panels, QuadOptions};

/// Proton density of glycerine (m⁻³).
pub const RHO_GLYCERINE: f64 = 66e27;
/// Proton density of immersion oil (m⁻³).
pub const RHO_OIL: f64 = 69.5e27;
/// Default proton diffusion coefficient (m² s⁻¹).
pub const DEFAULT_DIFFUSION: f64 = 1e-13;

/// Statistically polarized proton bath above a [100] diamond surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtonBathModel {
    /// m⁻³
    pub rho: f64,
    /// rad s⁻¹ T⁻¹
    pub gamma_n: f64,
    pub t2n_star: f64,
    /// m² s⁻¹
    pub diffusion: f64,
    /// m
    pub depth: f64,
}

impl ProtonBathModel {
    pub fn new(rho: f64, depth: f64, t2n_star: f64) -> Result<Self> {
        let m = ProtonBathModel {
            rho,
            gamma_n: GAMMA_PROTON,
            t2n_star,
            diffusion: DEFAULT_DIFFUSION,
            depth,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("rho", self.rho)?;
        ensure_positive("depth", self.depth)?;
        ensure_positive("t2n_star", self.t2n_star)?;
        if !(self.gamma_n.is_finite() && self.gamma_n != 0.0) {
            return Err(Error::parameter("gamma_n", "must be finite and nonzero"));
        }
        if !(self.diffusion >= 0.0 && self.diffusion.is_finite()) {
            return Err(Error::parameter("diffusion", "must be non-negative"));
        }
        Ok(())
    }

    /// Half width of the proton line (rad/s): `1/T₂* + D/d²`.
    pub fn linewidth(&self) -> f64 {
        1.0 / self.t2n_star + self.diffusion / (self.depth * self.depth)
    }
}

/// `B²_RMS = ρ (μ₀ħγ_n/4π)² · 5π/(96 d³)` (T²).
pub fn b_rms_squared(model: &ProtonBathModel) -> Result<f64> {
    model.validate()?;
    let c = MU_0 * HBAR * model.gamma_n / (4.0 * PI);
    Ok(model.rho * c * c * 5.0 * PI / (96.0 * model.depth.powi(3)))
}

/// Passband approximation of [`kernel_k_exact`]: near ω₀ the filter is
/// `(4T²/π²) sinc²((ω−ω₀)T/2)`, whose Lorentzian overlap is
/// `K = 2T² Re[(e^w − 1 − w)/w²]` with `w = (−Γ + iδ)T`, `δ = ω₀ − ω_L`.
pub fn kernel_k(seq: &DdSequence, larmor: f64, half_width: f64) -> Result<f64> {
    ensure_positive("larmor", larmor)?;
    ensure_positive("half_width", half_width)?;
    let t = seq.total_time;
    let w = Complex64::new(-half_width * t, (seq.omega0() - larmor) * t);
    let g = if w.norm() < 1e-3 {
        Complex64::new(0.5, 0.0) + w / 6.0 + w * w / 24.0 + w * w * w / 120.0
    } else {
        (w.exp() - 1.0 - w) / (w * w)
    };
    Ok(2.0 * t * t * g.re)
}

/// Spectral overlap `K = (π²/4) ∫ L(ω) F(ω) dω` of the sequence filter with a
/// unit-area Lorentzian at the Larmor frequency, by quadrature.
///
/// Normalized so that `K → T²` for a narrow line on resonance.
pub fn kernel_k_exact(seq: &DdSequence, larmor: f64, half_width: f64) -> Result<f64> {
    ensure_positive("larmor", larmor)?;
    ensure_positive("half_width", half_width)?;
    let lorentz = |w: f64| half_width / PI / ((w - larmor).powi(2) + half_width * half_width);
    let lobe = 2.0 * PI / seq.total_time;
    let w0 = seq.omega0();
    let mut breaks = vec![0.0];
    for k in [1.0, 3.0, 10.0, 30.0, 100.0, 300.0] {
        breaks.push(larmor - k * half_width);
        breaks.push(larmor + k * half_width);
    }
    for h in [1.0, 3.0, 5.0] {
        for m in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
            breaks.push(h * w0 - m * lobe);
            breaks.push(h * w0 + m * lobe);
        }
    }
    let upper = (larmor + 300.0 * half_width).max(6.0 * w0);
    breaks.push(upper);
    breaks.retain(|b| *b >= 0.0 && *b <= upper);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // K is of order T² at most; per-panel absolute floor well below that.
    let opts = QuadOptions {
        abs_tol: 1e-10 * seq.total_time * seq.total_time,
        rel_tol: 1e-8,
        max_intervals: 4000,
    };
    let body = integrate_panels(|w| lorentz(w) * exact_filter(seq, w), &breaks, opts)?;
    // Lorentzian tail beyond the last break against the averaged filter envelope 8/ω².
    let tail = half_width / PI * 8.0 / (3.0 * (upper - larmor).powi(3));
    Ok(PI * PI / 4.0 * (body.value + tail))
}

/// One point of a proton-NMR dip scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub tau_s: f64,
    pub coherence: f64,
    pub sigma: f64,
}

/// Sample immersion liquid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sample {
    Glycerine,
    Oil,
}

/// Sidecar metadata of a depth dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub sequence: Family,
    #[serde(rename = "N")]
    pub n_pulses: usize,
    pub b0_tesla: f64,
    pub sample: Sample,
    pub rho_per_nm3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_m2_per_s: Option<f64>,
}

impl DepthSidecar {
    pub fn rho(&self) -> f64 {
        self.rho_per_nm3 * 1e27
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion_m2_per_s.unwrap_or(DEFAULT_DIFFUSION)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("b0_tesla", self.b0_tesla)?;
        ensure_positive("rho_per_nm3", self.rho_per_nm3)?;
        if self.n_pulses == 0 {
            return Err(Error::parameter("N", "depth scans need a pulse sequence"));
        }
        DdSequence::new(self.sequence, self.n_pulses, 1.0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthDataset {
    pub sidecar: DepthSidecar,
    pub points: Vec<DepthPoint>,
}

impl DepthDataset {
    pub fn validate(&self) -> Result<()> {
        self.sidecar.validate()?;
        if self.points.is_empty() {
            return Err(Error::Data("depth dataset has no points".into()));
        }
        for p in &self.points {
            if !(p.tau_s > 0.0 && p.coherence.is_finite() && p.sigma > 0.0) {
                return Err(Error::Data(format!("invalid depth point {p:?}")));
            }
        }
        Ok(())
    }
}

/// `C(τ) = exp[−(2/π²) γ_e² B²_RMS K(Nτ)]` for every τ.
pub fn proton_signal_coherence(
    model: &ProtonBathModel,
    family: Family,
    n_pulses: usize,
    b0: f64,
    taus: &[f64],
) -> Result<Vec<f64>> {
    let b2 = b_rms_squared(model)?;
    ensure_positive("b0", b0)?;
    let larmor = model.gamma_n.abs() * b0;
    let gamma = model.linewidth();
    taus.par_iter()
        .map(|&tau| {
            let seq = DdSequence::with_spacing(family, n_pulses, tau)?;
            if b2 == 0.0 {
                return Ok(1.0);
            }
            let k = kernel_k(&seq, larmor, gamma)?;
            Ok((-2.0 / (PI * PI) * GAMMA_E * GAMMA_E * b2 * k).exp())
        })
        .collect()
}

/// Depth fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthFit {
    pub depth_m: f64,
    pub depth_err_m: f64,
    pub t2n_star: f64,
    pub t2n_star_err: f64,
    pub b_rms: f64,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
}

impl DepthFit {
    pub fn depth_nm(&self) -> f64 {
        self.depth_m * 1e9
    }

    pub fn depth_err_nm(&self) -> f64 {
        self.depth_err_m * 1e9
    }
}

/// Least-squares fit of depth and proton dephasing time with ρ, γ_n and the
/// sequence fixed.
pub fn fit_depth(data: &DepthDataset) -> Result<DepthFit> {
    data.validate()?;
    let min_c = data
        .points
        .iter()
        .map(|p| p.coherence)
        .fold(f64::INFINITY, f64::min);
    if min_c >= 0.95 {
        return Err(Error::Degenerate(format!(
            "no proton dip: minimum coherence {min_c:.3} ≥ 0.95"
        )));
    }
    let sc = &data.sidecar;
    let taus: Vec<f64> = data.points.iter().map(|p| p.tau_s).collect();
    let model_at = |depth: f64, t2: f64| -> Result<Vec<f64>> {
        let m = ProtonBathModel {
            rho: sc.rho(),
            gamma_n: GAMMA_PROTON,
            t2n_star: t2,
            diffusion: sc.diffusion(),
            depth,
        };
        proton_signal_coherence(&m, sc.sequence, sc.n_pulses, sc.b0_tesla, &taus)
    };
    let chi2_of = |c: &[f64]| -> f64 {
        c.iter()
            .zip(&data.points)
            .map(|(m, p)| ((m - p.coherence) / p.sigma).powi(2))
            .sum()
    };
    // Coarse grid for the starting point.
    let mut grid = Vec::new();
    for i in 0..=24 {
        let d = 3e-9 * (300.0f64 / 3.0).powf(i as f64 / 24.0);
        for t2 in [3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3] {
            grid.push((d, t2));
        }
    }
    let scored: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .filter_map(|&(d, t2)| model_at(d, t2).ok().map(|c| (d, t2, chi2_of(&c))))
        .collect();
    let &(d0, t0, _) = scored
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::Degenerate("depth model could not be evaluated".into()))?;
    let residual = |p: &[f64]| -> Vec<f64> {
        match model_at(p[0].exp(), p[1].exp()) {
            Ok(c) => c
                .iter()
                .zip(&data.points)
                .map(|(m, pt)| (m - pt.coherence) / pt.sigma)
                .collect(),
            Err(_) => vec![f64::NAN; data.points.len()],
        }
    };
    let fit = levenberg_marquardt(
        residual,
        &[d0.ln(), t0.ln()],
        LmOptions {
            scale_covariance: false,
            ..LmOptions::default()
        },
    )?;
    let se = fit.std_errors();
    let depth = fit.params[0].exp();
    let t2 = fit.params[1].exp();
    let b2 = b_rms_squared(&ProtonBathModel {
        rho: sc.rho(),
        gamma_n: GAMMA_PROTON,
        t2n_star: t2,
        diffusion: sc.diffusion(),
        depth,
    })?;
    Ok(DepthFit {
        depth_m: depth,
        depth_err_m: depth * se[0],
        t2n_star: t2,
        t2n_star_err: t2 * se[1],
        b_rms: b2.sqrt(),
        chi2: fit.chi2,
        reduced_chi2: fit.reduced_chi2(),
        iterations: fit.iterations,
    })
}
