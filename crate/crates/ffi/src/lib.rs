//! C ABI for `nvmag`.
//!
//! Every function returns an [`NvmagStatus`]; results go through out
//! pointers. After a non-zero status, [`nvmag_last_error`] describes the
//! failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nvmag::dd::Family;
use nvmag::depth::{fit_depth, DepthDataset, DepthPoint, DepthSidecar, Sample};
use nvmag::error::ErrorKind;
use nvmag::protocol::{run_experiment, ProtocolConfig};
use nvmag::sensitivity::{self, SensitivityBudget};
use nvmag::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvmagStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvmagFamily {
    Free = 0,
    Cpmg = 1,
    Xy8 = 2,
    Xy16 = 3,
}

impl From<NvmagFamily> for Family {
    fn from(f: NvmagFamily) -> Self {
        match f {
            NvmagFamily::Free => Family::Free,
            NvmagFamily::Cpmg => Family::Cpmg,
            NvmagFamily::Xy8 => Family::Xy8,
            NvmagFamily::Xy16 => Family::Xy16,
        }
    }
}

/// Result of a depth fit. Lengths in m, times in s.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NvmagDepthFit {
    pub depth_m: f64,
    pub depth_err_m: f64,
    pub t2n_star_s: f64,
    pub t2n_star_err_s: f64,
    pub reduced_chi2: f64,
}

/// Sensitivity of a simulated run. η in T/√Hz.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NvmagSensitivity {
    pub eta_asymptote: f64,
    pub eta_slope: f64,
    pub eta_predicted: f64,
    pub total_time_s: f64,
    pub shots: usize,
}

/// Opaque protocol configuration.
pub struct NvmagProtocol {
    cfg: ProtocolConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v = e.borrow_mut();
        v.clear();
        v.extend(msg.bytes().filter(|&b| b != 0));
        v.push(0);
    });
}

fn status_of(e: &Error) -> NvmagStatus {
    match e.kind() {
        ErrorKind::Usage => NvmagStatus::Usage,
        ErrorKind::Data => NvmagStatus::Data,
        ErrorKind::Numerical => NvmagStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), NvmagStatus>) -> NvmagStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NvmagStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            NvmagStatus::Panic
        }
    }
}

fn lift<T>(r: nvmag::Result<T>) -> Result<T, NvmagStatus> {
    r.map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), NvmagStatus> {
    if p.is_null() {
        set_error(&format!("{name} is null"));
        Err(NvmagStatus::NullPointer)
    } else {
        Ok(())
    }
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nvmag_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let v = e.borrow();
        let msg = if v.is_empty() { &[0u8][..] } else { &v[..] };
        let n = msg.len() - 1;
        if !buf.is_null() && len > 0 {
            let k = n.min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, k);
            *buf.add(k) = 0;
        }
        n
    })
}

/// Energy resolution per bandwidth, in units of ħ.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn nvmag_erl_compute(eta: f64, l_eff_m: f64, out: *mut f64) -> NvmagStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(sensitivity::erl_compute(eta, l_eff_m))?;
        Ok(())
    })
}

/// Power decibels of `E_R` below ħ.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn nvmag_db_below_erl(e_r_hbar: f64, out: *mut f64) -> NvmagStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(sensitivity::db_below_erl(e_r_hbar))?;
        Ok(())
    })
}

/// ERL noise line `2μ₀ħ/(e l³)` in T²/Hz.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn nvmag_erl_noise_line(l_eff_m: f64, out: *mut f64) -> NvmagStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(nvmag::noise::erl_noise_line(l_eff_m))?;
        Ok(())
    })
}

/// Sensitivity (T/√Hz) from a timing and fidelity budget.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn nvmag_eta_from_budget(
    t_c: f64,
    contrast: f64,
    f_i: f64,
    f_r: f64,
    t_ir: f64,
    out: *mut f64,
) -> NvmagStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = lift(SensitivityBudget::new(t_c, contrast, f_i, f_r, t_ir))?;
        *out = lift(sensitivity::eta_from_budget(&b))?;
        Ok(())
    })
}

/// Fit the NV depth to a proton-dip scan of `n` points.
///
/// `sigma` may be null for unit weights.
///
/// # Safety
/// `tau_s` and `coherence` (and `sigma` if non-null) must point to `n`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvmag_depth_fit(
    tau_s: *const f64,
    coherence: *const f64,
    sigma: *const f64,
    n: usize,
    family: NvmagFamily,
    n_pulses: usize,
    b0_tesla: f64,
    rho_per_nm3: f64,
    out: *mut NvmagDepthFit,
) -> NvmagStatus {
    guard(|| {
        non_null(tau_s, "tau_s")?;
        non_null(coherence, "coherence")?;
        non_null(out, "out")?;
        let taus = std::slice::from_raw_parts(tau_s, n);
        let cs = std::slice::from_raw_parts(coherence, n);
        let sig = if sigma.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(sigma, n))
        };
        let points = (0..n)
            .map(|i| DepthPoint {
                tau_s: taus[i],
                coherence: cs[i],
                sigma: sig.map_or(1.0, |s| s[i]),
            })
            .collect();
        let data = DepthDataset {
            sidecar: DepthSidecar {
                sequence: family.into(),
                n_pulses,
                b0_tesla,
                sample: Sample::Glycerine,
                rho_per_nm3,
                diffusion_m2_per_s: None,
            },
            points,
        };
        lift(data.validate())?;
        let fit = lift(fit_depth(&data))?;
        *out = NvmagDepthFit {
            depth_m: fit.depth_m,
            depth_err_m: fit.depth_err_m,
            t2n_star_s: fit.t2n_star,
            t2n_star_err_s: fit.t2n_star_err,
            reduced_chi2: fit.reduced_chi2,
        };
        Ok(())
    })
}

/// New protocol with the NV3 defaults. Free with [`nvmag_protocol_free`].
///
/// # Safety
/// `out` must point to a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nvmag_protocol_new_nv3(out: *mut *mut NvmagProtocol) -> NvmagStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(NvmagProtocol {
            cfg: ProtocolConfig::nv3(),
        }));
        Ok(())
    })
}

/// Protocol from a JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvmag_protocol_from_json(
    json: *const c_char,
    out: *mut *mut NvmagProtocol,
) -> NvmagStatus {
    guard(|| {
        non_null(json, "json")?;
        non_null(out, "out")?;
        let s = CStr::from_ptr(json).to_str().map_err(|e| {
            set_error(&format!("json is not UTF-8: {e}"));
            NvmagStatus::Usage
        })?;
        let cfg: ProtocolConfig = serde_json::from_str(s).map_err(|e| {
            set_error(&format!("protocol config: {e}"));
            NvmagStatus::Usage
        })?;
        lift(cfg.validate())?;
        *out = Box::into_raw(Box::new(NvmagProtocol { cfg }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nvmag_protocol_free(p: *mut NvmagProtocol) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live protocol handle.
#[no_mangle]
pub unsafe extern "C" fn nvmag_protocol_set_shots(
    p: *mut NvmagProtocol,
    shots: usize,
) -> NvmagStatus {
    guard(|| {
        non_null(p, "protocol")?;
        if shots == 0 {
            set_error("shots must be positive");
            return Err(NvmagStatus::Usage);
        }
        (*p).cfg.n_shots = shots;
        Ok(())
    })
}

/// Simulate the sensitivity run and reduce it to η.
///
/// # Safety
/// `p` must be a live protocol handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nvmag_protocol_run(
    p: *const NvmagProtocol,
    seed: u64,
    out: *mut NvmagSensitivity,
) -> NvmagStatus {
    guard(|| {
        non_null(p, "protocol")?;
        non_null(out, "out")?;
        let cfg = &(*p).cfg;
        let predicted = lift(
            cfg.predicted_budget()
                .and_then(|b| sensitivity::eta_from_budget(&b)),
        )?;
        let run = lift(run_experiment(cfg, seed))?;
        let durations = run.durations();
        let ts = lift(sensitivity::sensitivity_from_timeseries(
            &run.outcomes(),
            &run.signs(),
            run.amplitude(),
            &durations,
            40,
        ))?;
        *out = NvmagSensitivity {
            eta_asymptote: ts.asymptote,
            eta_slope: ts.eta_slope,
            eta_predicted: predicted,
            total_time_s: durations.iter().sum(),
            shots: run.shots.len(),
        };
        Ok(())
    })
}
