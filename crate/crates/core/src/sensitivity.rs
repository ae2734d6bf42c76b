//! Sensitivity budget, fringe calibration, sensitivity from time series and
//! the energy-resolution benchmark.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{power_db, GAMMA_E, HBAR, MU_0};
use crate::error::{ensure_positive, Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};

/// The factors entering the single-spin sensitivity formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBudget {
    /// Phase-accumulation time (s).
    pub t_c: f64,
    /// Remaining coherence at `t_c`.
    pub c: f64,
    /// Initialization fidelity.
    pub f_i: f64,
    /// Readout fidelity.
    pub f_r: f64,
    /// Initialization + readout overhead per shot (s).
    pub t_ir: f64,
    /// rad s⁻¹ T⁻¹
    #[serde(default = "default_gamma")]
    pub gamma_e: f64,
}

fn default_gamma() -> f64 {
    GAMMA_E
}

impl SensitivityBudget {
    pub fn new(t_c: f64, c: f64, f_i: f64, f_r: f64, t_ir: f64) -> Result<Self> {
        let b = SensitivityBudget {
            t_c,
            c,
            f_i,
            f_r,
            t_ir,
            gamma_e: GAMMA_E,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("t_c", self.t_c)?;
        ensure_positive("gamma_e", self.gamma_e)?;
        if !(self.t_ir >= 0.0 && self.t_ir.is_finite()) {
            return Err(Error::parameter("t_ir", "must be non-negative"));
        }
        for (name, v) in [("c", self.c), ("f_i", self.f_i), ("f_r", self.f_r)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::parameter(
                    name,
                    format!("must lie in (0, 1], got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Shot duration `T_C + T_ir`.
    pub fn shot_time(&self) -> f64 {
        self.t_c + self.t_ir
    }
}

/// `η = 1/(γ√T_C) · 1/(C F_r F_i) · √(1 + T_ir/T_C)` in T/√Hz.
pub fn eta_from_budget(b: &SensitivityBudget) -> Result<f64> {
    b.validate()?;
    Ok(1.0 / (b.gamma_e * b.t_c.sqrt()) / (b.c * b.f_r * b.f_i) * (1.0 + b.t_ir / b.t_c).sqrt())
}

/// Energy resolution per bandwidth `η² l³ / (2μ₀ħ)` in units of ħ.
pub fn erl_compute(eta: f64, l_eff: f64) -> Result<f64> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::parameter("eta", "must be non-negative"));
    }
    ensure_positive("l_eff", l_eff)?;
    Ok(eta * eta * l_eff.powi(3) / (2.0 * MU_0 * HBAR))
}

/// How far below the ħ line an energy resolution sits (dB, power ratio).
pub fn db_below_erl(e_r_hbar: f64) -> Result<f64> {
    ensure_positive("e_r", e_r_hbar)?;
    Ok(power_db(1.0 / e_r_hbar))
}

/// One magnetometer in the energy-resolution comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerRecord {
    pub kind: String,
    pub l_eff_m: f64,
    pub eta_t_per_sqrt_hz: f64,
    #[serde(rename = "ref")]
    pub reference: String,
    pub e_r_hbar: f64,
}

/// Protocol parameters and results of one characterized NV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvResult {
    pub nv: u32,
    pub sequence: String,
    pub t_c_s: f64,
    pub readout_cycles: usize,
    pub total_time_s: f64,
    pub depth_m: f64,
    pub depth_err_m: f64,
    pub eta_t_per_sqrt_hz: f64,
    pub eta_err_t_per_sqrt_hz: f64,
    pub e_r_hbar: f64,
}

impl NvResult {
    /// Initialization and readout overhead `total − T_C`.
    pub fn t_ir(&self) -> f64 {
        self.total_time_s - self.t_c_s
    }

    /// As a magnetometer record, with the depth as the sensing length.
    pub fn as_record(&self) -> MagnetometerRecord {
        MagnetometerRecord {
            kind: "NV".into(),
            l_eff_m: self.depth_m,
            eta_t_per_sqrt_hz: self.eta_t_per_sqrt_hz,
            reference: format!("NV{} measurement", self.nv),
            e_r_hbar: self.e_r_hbar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub index: usize,
    pub kind: String,
    pub l_eff_m: f64,
    pub stored: f64,
    pub recomputed: f64,
    pub rel_deviation: f64,
    /// Only for sub-ħ entries.
    pub db_below_erl: Option<f64>,
    /// Set when the row only matches under a different η unit.
    pub unit_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: Vec<RowCheck>,
    pub max_rel_deviation: f64,
}

impl TableReport {
    pub fn all_within(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.rel_deviation <= tol)
    }
}

/// Recompute every row's E_R and compare with the stored value.
pub fn erl_table_check(records: &[MagnetometerRecord]) -> Result<TableReport> {
    if records.is_empty() {
        return Err(Error::Data("magnetometer table is empty".into()));
    }
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let recomputed = erl_compute(r.eta_t_per_sqrt_hz, r.l_eff_m)?;
            let rel = (recomputed - r.e_r_hbar).abs() / r.e_r_hbar.abs();
            let unit_warning = if rel > 0.1 {
                let as_nt = erl_compute(r.eta_t_per_sqrt_hz * 1e-9, r.l_eff_m)?;
                if ((as_nt - r.e_r_hbar) / r.e_r_hbar).abs() <= 0.1 {
                    Some("stored E_R matches only if η is read as nT/√Hz".to_string())
                } else {
                    Some("stored E_R inconsistent with η and l_eff".to_string())
                }
            } else {
                None
            };
            Ok(RowCheck {
                index: i + 1,
                kind: r.kind.clone(),
                l_eff_m: r.l_eff_m,
                stored: r.e_r_hbar,
                recomputed,
                rel_deviation: rel,
                db_below_erl: if recomputed < 1.0 && recomputed > 0.0 {
                    Some(power_db(1.0 / recomputed))
                } else {
                    None
                },
                unit_warning,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rel_deviation = rows.iter().map(|r| r.rel_deviation).fold(0.0, f64::max);
    Ok(TableReport {
        rows,
        max_rel_deviation,
    })
}

/// Grid-search result of the budget optimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetOptimum {
    pub t_c: f64,
    pub n_fb: usize,
    pub n_ro: usize,
    pub eta: f64,
    /// η versus readout cycles at the optimal `t_c` and `n_fb`.
    pub n_ro_slice: Vec<(usize, f64)>,
}

/// Trade-off curves for [`optimize_budget`].
pub struct TradeOffModels<'a> {
    pub coherence: &'a dyn Fn(f64) -> f64,
    pub f_i: &'a dyn Fn(usize) -> f64,
    pub f_r: &'a dyn Fn(usize) -> f64,
    /// Overhead `T_ir` (s) as a function of (feedback cycles, readout cycles).
    pub overhead: &'a dyn Fn(usize, usize) -> f64,
    pub gamma_e: f64,
}

/// Exhaustive grid minimization of η; ties keep the earliest grid point.
pub fn optimize_budget(
    models: &TradeOffModels<'_>,
    t_c_grid: &[f64],
    n_fb_grid: &[usize],
    n_ro_grid: &[usize],
) -> Result<BudgetOptimum> {
    if t_c_grid.is_empty() || n_fb_grid.is_empty() || n_ro_grid.is_empty() {
        return Err(Error::parameter("grid", "all grids must be non-empty"));
    }
    let eval = |t_c: f64, nf: usize, nr: usize| -> f64 {
        let b = SensitivityBudget {
            t_c,
            c: (models.coherence)(t_c),
            f_i: (models.f_i)(nf),
            f_r: (models.f_r)(nr),
            t_ir: (models.overhead)(nf, nr),
            gamma_e: models.gamma_e,
        };
        eta_from_budget(&b).unwrap_or(f64::INFINITY)
    };
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for &t_c in t_c_grid {
        for &nf in n_fb_grid {
            for &nr in n_ro_grid {
                let e = eval(t_c, nf, nr);
                if best.is_none_or(|b| e < b.3) {
                    best = Some((t_c, nf, nr, e));
                }
            }
        }
    }
    let (t_c, n_fb, n_ro, eta) = best.expect("grids are non-empty");
    if !eta.is_finite() {
        return Err(Error::Domain("no grid point gives a valid budget".into()));
    }
    Ok(BudgetOptimum {
        t_c,
        n_fb,
        n_ro,
        eta,
        n_ro_slice: n_ro_grid
            .iter()
            .map(|&nr| (nr, eval(t_c, n_fb, nr)))
            .collect(),
    })
}

/// Fit of `N(V) = a sin(γ T B_V V + φ) + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub a: f64,
    pub c_offset: f64,
    /// T/V
    pub b_v: f64,
    pub phi: f64,
    pub interrogation_time: f64,
    pub a_err: f64,
    pub c_err: f64,
    pub b_v_err: f64,
    pub phi_err: f64,
}

impl FringeFit {
    pub fn eval(&self, v: f64, gamma: f64) -> f64 {
        self.a * (gamma * self.interrogation_time * self.b_v * v + self.phi).sin() + self.c_offset
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Linear least squares of `y ≈ s sin(kv) + c cos(kv) + o`; returns (s, c, o, rss).
fn sinusoid_at(k: f64, v: &[f64], y: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&vi, &yi) in v.iter().zip(y) {
        let row = nalgebra::Vector3::new((k * vi).sin(), (k * vi).cos(), 1.0);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let sol = ata.cholesky()?.solve(&aty);
    let rss = v
        .iter()
        .zip(y)
        .map(|(&vi, &yi)| {
            let m = sol[0] * (k * vi).sin() + sol[1] * (k * vi).cos() + sol[2];
            (yi - m).powi(2)
        })
        .sum();
    Some((sol[0], sol[1], sol[2], rss))
}

/// Fit a Ramsey-type fringe of counts versus coil voltage.
///
/// Requires at least one full period inside the voltage span.
pub fn fit_fringe(volts: &[f64], counts: &[f64], interrogation_time: f64) -> Result<FringeFit> {
    fit_fringe_with_gamma(volts, counts, interrogation_time, GAMMA_E)
}

pub fn fit_fringe_with_gamma(
    volts: &[f64],
    counts: &[f64],
    interrogation_time: f64,
    gamma: f64,
) -> Result<FringeFit> {
    ensure_positive("interrogation_time", interrogation_time)?;
    if volts.len() != counts.len() {
        return Err(Error::Shape {
            expected: format!("{} counts", volts.len()),
            found: counts.len().to_string(),
        });
    }
    if volts.len() < 5 {
        return Err(Error::Data("fringe fit needs at least 5 points".into()));
    }
    let vmin = volts.iter().cloned().fold(f64::INFINITY, f64::min);
    let vmax = volts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = vmax - vmin;
    if !(span > 0.0) {
        return Err(Error::Data("voltage span is zero".into()));
    }
    let mut sorted = volts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_dv = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    // Angular frequency in V⁻¹, scanned up to the sampling limit.
    let k_lo = 0.25 * 2.0 * PI / span;
    let k_hi = PI / min_dv;
    let n_scan = 4000;
    let mut best: Option<(f64, f64, f64, f64, f64)> = None;
    for i in 0..=n_scan {
        let k = k_lo * (k_hi / k_lo).powf(i as f64 / n_scan as f64);
        if let Some((s, c, o, rss)) = sinusoid_at(k, volts, counts) {
            if best.is_none_or(|b| rss < b.4) {
                best = Some((k, s, c, o, rss));
            }
        }
    }
    let (k0, s0, c0, o0, _) = best.ok_or_else(|| Error::Degenerate("fringe scan failed".into()))?;
    let a0 = s0.hypot(c0);
    let phi0 = c0.atan2(s0);
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let var = counts.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / counts.len() as f64;
    if var == 0.0 {
        return Err(Error::Degenerate("counts carry no contrast".into()));
    }
    let scale_y = var.sqrt().max(mean.abs()).max(1e-300);
    let residual = |p: &[f64]| -> Vec<f64> {
        volts
            .iter()
            .zip(counts)
            .map(|(&v, &y)| ((p[0] * (p[1] * k0 * v + p[2]).sin() + p[3]) * scale_y - y) / scale_y)
            .collect()
    };
    let fit = levenberg_marquardt(
        residual,
        &[a0 / scale_y, 1.0, phi0, o0 / scale_y],
        LmOptions::default(),
    )?;
    let se = fit.std_errors();
    let mut a = fit.params[0] * scale_y;
    let k = fit.params[1] * k0;
    let mut phi = fit.params[2];
    let c = fit.params[3] * scale_y;
    let a_err = se[0] * scale_y;
    // The frequency scan picks the best of ~N/2 independent trials, so pure
    // noise routinely reaches 3σ.
    if !(a.abs() > 5.0 * a_err) || a == 0.0 {
        return Err(Error::Degenerate(format!(
            "fringe amplitude {a:.3e} not resolved (σ = {a_err:.3e})"
        )));
    }
    if a < 0.0 {
        a = -a;
        phi += PI;
    }
    let (k, phi) = if k < 0.0 { (-k, PI - phi) } else { (k, phi) };
    if k * span < 2.0 * PI {
        return Err(Error::Ambiguous(format!(
            "voltage span covers {:.2} fringe periods; at least one is required",
            k * span / (2.0 * PI)
        )));
    }
    let conv = 1.0 / (gamma * interrogation_time);
    Ok(FringeFit {
        a,
        c_offset: c,
        b_v: k * conv,
        phi: wrap_phase(phi),
        interrogation_time,
        a_err,
        c_err: se[3] * scale_y,
        b_v_err: se[1] * k0 * conv,
        phi_err: se[2],
    })
}

/// η versus averaging time from a ± modulated signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSensitivity {
    /// Averaging time of each window (s).
    pub times: Vec<f64>,
    pub snr: Vec<f64>,
    /// T/√Hz
    pub eta: Vec<f64>,
    /// Field uncertainty `η/√t` (T).
    pub delta_b: Vec<f64>,
    /// Mean η over the last decade of averaging times.
    pub asymptote: f64,
    /// Log–log slope of η over the last decade.
    pub eta_slope: f64,
    /// Log–log slope of δB over the last decade.
    pub delta_b_slope: f64,
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// Sensitivity from per-shot outcomes.
///
/// `signs[i] = ±1` gives the sign of the applied signal on shot i;
/// `shot_durations[i]` is the wall time of that shot. SNR over the first
/// n shots is `|N̄₊ − N̄₋| / √(s₊²/n₊ + s₋²/n₋)` and `η = B_s √t / SNR`.
pub fn sensitivity_from_timeseries(
    outcomes: &[f64],
    signs: &[f64],
    amplitude: f64,
    shot_durations: &[f64],
    n_windows: usize,
) -> Result<TimeSeriesSensitivity> {
    let n = outcomes.len();
    if n < 100 {
        return Err(Error::Data(format!("need at least 100 shots, got {n}")));
    }
    if signs.len() != n || shot_durations.len() != n {
        return Err(Error::Shape {
            expected: format!("{n} signs and durations"),
            found: format!("{}/{}", signs.len(), shot_durations.len()),
        });
    }
    ensure_positive("amplitude", amplitude)?;
    // Cumulative sums per sign.
    let mut ends: Vec<usize> = (0..n_windows.max(2))
        .map(|i| {
            let f = i as f64 / (n_windows.max(2) - 1) as f64;
            (100f64 * (n as f64 / 100.0).powf(f)).round() as usize
        })
        .collect();
    ends.dedup();
    let mut times = Vec::new();
    let mut snr = Vec::new();
    let mut eta = Vec::new();
    let mut delta_b = Vec::new();
    let (mut sp, mut sp2, mut np) = (0.0, 0.0, 0.0);
    let (mut sm, mut sm2, mut nm) = (0.0, 0.0, 0.0);
    let mut t = 0.0;
    let mut idx = 0;
    for &end in &ends {
        while idx < end.min(n) {
            let y = outcomes[idx];
            if signs[idx] > 0.0 {
                sp += y;
                sp2 += y * y;
                np += 1.0;
            } else {
                sm += y;
                sm2 += y * y;
                nm += 1.0;
            }
            t += shot_durations[idx];
            idx += 1;
        }
        if np < 2.0 || nm < 2.0 {
            continue;
        }
        let mp = sp / np;
        let mm = sm / nm;
        let vp = (sp2 - np * mp * mp) / (np - 1.0);
        let vm = (sm2 - nm * mm * mm) / (nm - 1.0);
        let sigma = (vp.max(0.0) / np + vm.max(0.0) / nm).sqrt();
        if sigma == 0.0 {
            return Err(Error::Degenerate("shot outcomes have zero variance".into()));
        }
        let s = (mp - mm).abs() / sigma;
        times.push(t);
        snr.push(s);
        let e = amplitude * t.sqrt() / s;
        eta.push(e);
        delta_b.push(e / t.sqrt());
    }
    if times.len() < 2 {
        return Err(Error::Data("too few windows with both signal signs".into()));
    }
    let t_end = times[times.len() - 1];
    let tail: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= t_end / 10.0)
        .collect();
    let tx: Vec<f64> = tail.iter().map(|&i| times[i]).collect();
    let te: Vec<f64> = tail.iter().map(|&i| eta[i]).collect();
    let td: Vec<f64> = tail.iter().map(|&i| delta_b[i]).collect();
    let finite: Vec<f64> = te.iter().cloned().filter(|e| e.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Degenerate(
            "no resolvable signal in the final decade".into(),
        ));
    }
    let asymptote = finite.iter().sum::<f64>() / finite.len() as f64;
    Ok(TimeSeriesSensitivity {
        eta_slope: loglog_slope(&tx, &te),
        delta_b_slope: loglog_slope(&tx, &td),
        times,
        snr,
        eta,
        delta_b,
        asymptote,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn ideal_budget() {
        let b = SensitivityBudget::new(1.8e-3, 1.0, 1.0, 1.0, 0.0).unwrap();
        let eta = eta_from_budget(&b).unwrap();
        assert_relative_eq!(
            eta,
            1.0 / (GAMMA_E * 1.8e-3f64.sqrt()),
            max_relative = 1e-14
        );
        assert!((eta * 1e9 - 0.134).abs() < 0.0005, "{eta}");
    }

    #[test]
    fn halving_fr_doubles_eta() {
        let b = SensitivityBudget::new(1.8e-3, 0.4, 0.92, 0.84, 1.5e-3).unwrap();
        let b2 = SensitivityBudget { f_r: 0.42, ..b };
        assert_relative_eq!(
            eta_from_budget(&b2).unwrap(),
            2.0 * eta_from_budget(&b).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn invalid_budget_rejected() {
        assert!(SensitivityBudget::new(1e-3, 1.2, 1.0, 1.0, 0.0).is_err());
        assert!(SensitivityBudget::new(1e-3, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(SensitivityBudget::new(0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(SensitivityBudget::new(1e-3, 1.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn erl_values() {
        assert_relative_eq!(
            erl_compute(0.59e-9, 31.7e-9).unwrap(),
            0.042,
            max_relative = 0.02
        );
        assert_relative_eq!(
            erl_compute(5.3e-8, 4.0e-9).unwrap(),
            0.68,
            max_relative = 0.02
        );
        assert_eq!(erl_compute(0.0, 1e-9).unwrap(), 0.0);
        assert_eq!(db_below_erl(1.0).unwrap(), 0.0);
        let db = db_below_erl(erl_compute(0.59e-9, 31.7e-9).unwrap()).unwrap();
        assert!((db - 13.8).abs() < 0.15, "{db}");
    }

    #[test]
    fn table_check_flags_units() {
        let rows = vec![
            MagnetometerRecord {
                kind: "BEC".into(),
                l_eff_m: 1.1e-5,
                eta_t_per_sqrt_hz: 5.0e-13,
                reference: "17".into(),
                e_r_hbar: 1.24,
            },
            MagnetometerRecord {
                kind: "NV".into(),
                l_eff_m: 4.0e-9,
                eta_t_per_sqrt_hz: 53.0,
                reference: "1".into(),
                e_r_hbar: 0.68,
            },
        ];
        let rep = erl_table_check(&rows).unwrap();
        assert!(rep.rows[0].rel_deviation < 0.02);
        assert!(rep.rows[0].unit_warning.is_none());
        assert!(rep.rows[1].unit_warning.as_deref().unwrap().contains("nT"));
        assert!(erl_table_check(&[]).is_err());
    }

    #[test]
    fn budget_optimizer_trivial_cases() {
        let one = |_: f64| 1.0;
        let f1 = |_: usize| 1.0;
        let zero = |_: usize, _: usize| 0.0;
        let m = TradeOffModels {
            coherence: &one,
            f_i: &f1,
            f_r: &f1,
            overhead: &zero,
            gamma_e: GAMMA_E,
        };
        let grid = [1e-4, 5e-4, 1e-3, 2e-3];
        let o = optimize_budget(&m, &grid, &[1, 2], &[10, 20]).unwrap();
        assert_eq!(o.t_c, 2e-3);
        assert_eq!((o.n_fb, o.n_ro), (1, 10));
    }

    fn fringe_data(b_v: f64, phi: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let t = 1.8e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let volts: Vec<f64> = (0..81).map(|i| -0.2 + 0.4 * i as f64 / 80.0).collect();
        let counts = volts
            .iter()
            .map(|&v| {
                let mean = 300.0 * (GAMMA_E * t * b_v * v + phi).sin() + 2000.0;
                Poisson::new(mean).unwrap().sample(&mut rng)
            })
            .collect();
        (volts, counts)
    }

    #[test]
    fn fringe_recovers_coefficient() {
        let (v, n) = fringe_data(112e-9, 0.3, 5);
        let f = fit_fringe(&v, &n, 1.8e-3).unwrap();
        assert!((f.b_v / 112e-9 - 1.0).abs() < 0.03, "{}", f.b_v);
        assert!(f.a > 0.0 && f.a <= f.c_offset);
    }

    #[test]
    fn fringe_phase_shift_separates() {
        let (v, n1) = fringe_data(112e-9, 0.3, 9);
        let (_, n2) = fringe_data(112e-9, 1.3, 9);
        let f1 = fit_fringe(&v, &n1, 1.8e-3).unwrap();
        let f2 = fit_fringe(&v, &n2, 1.8e-3).unwrap();
        assert!((f1.b_v / f2.b_v - 1.0).abs() < 0.01);
        assert!((wrap_phase(f2.phi - f1.phi) - 1.0).abs() < 0.1);
    }

    #[test]
    fn fringe_count_rescaling_invariance() {
        let (v, n) = fringe_data(112e-9, 0.3, 2);
        let n3: Vec<f64> = n.iter().map(|x| 3.0 * x).collect();
        let f1 = fit_fringe(&v, &n, 1.8e-3).unwrap();
        let f3 = fit_fringe(&v, &n3, 1.8e-3).unwrap();
        assert_relative_eq!(f1.b_v, f3.b_v, max_relative = 1e-6);
        assert_relative_eq!(f1.phi, f3.phi, epsilon = 1e-6);
        assert_relative_eq!(3.0 * f1.a, f3.a, max_relative = 1e-6);
    }

    #[test]
    fn fringe_without_contrast_is_degenerate() {
        let v: Vec<f64> = (0..40).map(|i| i as f64 * 0.01).collect();
        let n = vec![1000.0; 40];
        assert!(matches!(
            fit_fringe(&v, &n, 1e-3),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fringe_under_one_period_is_ambiguous() {
        let t = 1.8e-3;
        let b_v = 112e-9;
        let period = 2.0 * PI / (GAMMA_E * t * b_v);
        let v: Vec<f64> = (0..50).map(|i| 0.6 * period * i as f64 / 49.0).collect();
        let n: Vec<f64> = v
            .iter()
            .map(|&x| 300.0 * (GAMMA_E * t * b_v * x + 0.2).sin() + 2000.0)
            .collect();
        assert!(matches!(fit_fringe(&v, &n, t), Err(Error::Ambiguous(_))));
    }

    fn shots(amplitude: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let signs: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let out = signs
            .iter()
            .map(|s| 100.0 + s * amplitude * 1e9 + noise.sample(&mut rng))
            .collect();
        (out, signs, vec![1e-3; n])
    }

    #[test]
    fn timeseries_scale_invariance_and_flatness() {
        let (o1, s, d) = shots(1e-9, 200_000, 4);
        let r1 = sensitivity_from_timeseries(&o1, &s, 1e-9, &d, 30).unwrap();
        let (o2, _, _) = shots(2e-9, 200_000, 4);
        let r2 = sensitivity_from_timeseries(&o2, &s, 2e-9, &d, 30).unwrap();
        assert_relative_eq!(r1.asymptote, r2.asymptote, max_relative = 1e-2);
        // σ = 5 counts, slope 1e9 counts/T, 1 ms shots: η = σ√t_shot / slope.
        let expected = 5.0 * 1e-3f64.sqrt() / 1e9;
        assert!((r1.asymptote / expected - 1.0).abs() < 0.05);
        assert!(r1.eta_slope.abs() < 0.05, "{}", r1.eta_slope);
        assert!((r1.delta_b_slope + 0.5).abs() < 0.05);
    }

    #[test]
    fn timeseries_needs_variance_and_shots() {
        let n = 200;
        let signs: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let flat = vec![3.0; n];
        assert!(matches!(
            sensitivity_from_timeseries(&flat, &signs, 1e-9, &vec![1e-3; n], 10),
            Err(Error::Degenerate(_))
        ));
        assert!(
            sensitivity_from_timeseries(&flat[..50], &signs[..50], 1e-9, &[1e-3; 50], 10).is_err()
        );
    }
}
