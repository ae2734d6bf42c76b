//! Acceptance gate: one PASS/FAIL line per criterion, then a single assert.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nvmag::constants::{HBAR, MU_0};
use nvmag::dd::Family;
use nvmag::depth::fit_depth;
use nvmag::io;
use nvmag::noise::{
    erl_margin_db, erl_noise_line, spectrum_iterate_step, zeroth_spectrum, Lorentzian,
    SpectralDensity,
};
use nvmag::protocol::{
    readout_calibration, run_experiment, run_fringe_sweep, simulate_charge_init,
    simulate_repetitive_readout, ChargeReadoutModel, NuclearState, ProtocolConfig,
    ReadoutChainModel,
};
use nvmag::pulse::{
    finite_difference_gradient, grape_gradient, optimize_multistart, random_waveform,
    verify_on_system, GrapeProblem, GrapeSpec,
};
use nvmag::sensitivity::{
    db_below_erl, erl_compute, erl_table_check, eta_from_budget, sensitivity_from_timeseries,
    SensitivityBudget,
};
use nvmag::spin::SpinSystem;
use nvmag::synth::{
    coherence_bundle, depth_dataset, nv3_noise_model, nv3_spectrum, BundleOptions,
    DepthSynthOptions, NV3_L_EFF, PLATEAU_F_MIN_HZ, TABLE_DEPTHS,
};

// Pinned tolerances.
const C1_ER_TARGET: f64 = 0.042;
const C1_ER_REL_TOL: f64 = 0.02;
const C1_DB_TARGET: f64 = 13.8;
const C1_DB_TOL: f64 = 0.15;
const C2_REL_TOL: f64 = 0.10;
// Spot rows: inputs carry two significant figures.
const C2_SPOT_REL_TOL: f64 = 0.02;
const C3_ETA_TARGET: f64 = 0.59e-9;
const C3_REL_TOL: f64 = 0.10;
const C4_REL_TOL: f64 = 0.10;
const C4_MAX_TIME: Duration = Duration::from_secs(10);
const C5_LINE_REL_TOL: f64 = 1e-12;
const C5_DB_TARGET: f64 = 21.6;
const C5_DB_TOL: f64 = 0.2;
const C6_MAX_TIME: Duration = Duration::from_secs(30);
const C7_FIDELITY: f64 = 0.9999;
const C7_GRAD_REL_TOL: f64 = 1e-5;
const C7_GRAD_SAMPLES: usize = 100;
const C7_MAX_TIME: Duration = Duration::from_secs(60);
const C8_PURITY_NO_FB: (f64, f64) = (0.72, 0.76);
const C8_PURITY_MIN: f64 = 0.94;
const C8_FR_TARGET: f64 = 0.84;
const C8_FR_TOL: f64 = 0.02;
const C8_ETA_TARGET: f64 = 0.59e-9;
const C8_ETA_REL_TOL: f64 = 0.15;
const C8_SLOPE_TOL: f64 = 0.05;
const C8_MAX_TIME: Duration = Duration::from_secs(300);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let e = erl_compute(0.59e-9, 31.7e-9).unwrap();
    let db = db_below_erl(e).unwrap();
    check(
        ((e - C1_ER_TARGET) / C1_ER_TARGET).abs() <= C1_ER_REL_TOL
            && (db - C1_DB_TARGET).abs() <= C1_DB_TOL,
        format!("E_R = {e:.4} ħ, {db:.2} dB below the ERL"),
    )
}

fn criterion_2() -> Outcome {
    let table = io::read_magnetometer_table(io::BUNDLED_MAGNETOMETERS.as_bytes()).unwrap();
    let report = erl_table_check(&table).unwrap();
    let r1 = report.rows[0].recomputed;
    let r2 = report.rows[1].recomputed;
    check(
        table.len() == 24
            && report.all_within(C2_REL_TOL)
            && ((r1 - 0.68) / 0.68).abs() <= C2_SPOT_REL_TOL
            && ((r2 - 1.24) / 1.24).abs() <= C2_SPOT_REL_TOL,
        format!(
            "{} rows, max deviation {:.2}%, row 1 {r1:.3} ħ, row 2 {r2:.3} ħ",
            table.len(),
            100.0 * report.max_rel_deviation
        ),
    )
}

fn criterion_3() -> Outcome {
    // Contrast from a single-exponential decay with T2 = 2.0 ms at T_C = 1.8 ms.
    let t_c = 1.8e-3;
    let c = (-t_c / 2.0e-3f64).exp();
    let b = SensitivityBudget::new(t_c, c, 0.92, 0.84, 3.336e-3 - t_c).unwrap();
    let eta = eta_from_budget(&b).unwrap();
    check(
        ((eta - C3_ETA_TARGET) / C3_ETA_TARGET).abs() <= C3_REL_TOL,
        format!("C = {c:.4}, η = {:.3} nT/√Hz", eta * 1e9),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let truth = Lorentzian::centered(1e-18, 2.0 * PI * 50e3);
    let curves = coherence_bundle(
        &truth,
        Family::Xy16,
        &[16, 64, 128, 512],
        BundleOptions::default(),
        0,
    )
    .unwrap();
    let (s0, _) = zeroth_spectrum(&curves).unwrap();
    let (s1, _) = spectrum_iterate_step(&s0, &s0, 2000).unwrap();
    let worst = s1
        .omega
        .iter()
        .zip(&s1.s)
        .map(|(&w, &s)| ((s - truth.density(w)) / truth.density(w)).abs())
        .fold(0.0, f64::max);
    let el = t.elapsed();
    check(
        worst <= C4_REL_TOL && el < C4_MAX_TIME,
        format!(
            "{} points over {:.0} to {:.0} kHz, worst deviation {:.2}%, {el:.2?}",
            s1.len(),
            s1.omega_min() / (2.0 * PI * 1e3),
            s1.omega_max() / (2.0 * PI * 1e3),
            100.0 * worst
        ),
    )
}

fn criterion_5() -> Outcome {
    let l = NV3_L_EFF;
    let line = erl_noise_line(l).unwrap();
    let exact = 2.0 * MU_0 * HBAR / (std::f64::consts::E * l * l * l);
    let direct = erl_margin_db(&nv3_spectrum().unwrap(), l, PLATEAU_F_MIN_HZ).unwrap();
    // The same model seen through synthetic coherence data and the inversion.
    let model = nv3_noise_model().unwrap();
    let curves = coherence_bundle(
        &model,
        Family::Xy16,
        &[16, 64, 128, 512],
        BundleOptions::default(),
        0,
    )
    .unwrap();
    let (s0, _) = zeroth_spectrum(&curves).unwrap();
    let (s1, _) = spectrum_iterate_step(&s0, &s0, 2000).unwrap();
    let recovered = erl_margin_db(&s1, l, PLATEAU_F_MIN_HZ).unwrap();
    check(
        ((line - exact) / exact).abs() <= C5_LINE_REL_TOL
            && (direct - C5_DB_TARGET).abs() <= C5_DB_TOL
            && (recovered - C5_DB_TARGET).abs() <= C5_DB_TOL,
        format!(
            "line {line:.4e} T²/Hz ({:.3} nT/√Hz), margin {direct:.2} dB, recovered {recovered:.2} dB",
            line.sqrt() * 1e9
        ),
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &(d, err)) in TABLE_DEPTHS.iter().enumerate() {
        let data = depth_dataset(d, DepthSynthOptions::default(), 100 + i as u64).unwrap();
        let fit = fit_depth(&data).unwrap();
        pass &= (fit.depth_m - d).abs() <= err;
        parts.push(format!("{:.1}→{:.2}", d * 1e9, fit.depth_nm()));
    }
    let el = t.elapsed();
    check(
        pass && el < C6_MAX_TIME,
        format!("{} nm, {el:.2?}", parts.join(", ")),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for spec in [GrapeSpec::pi(), GrapeSpec::half_pi()] {
        let p = spec.problem().unwrap();
        let r = optimize_multistart(&p, spec.restarts, spec.options(0)).unwrap();
        let (v, _) =
            verify_on_system(&spec.system(), &p.target, &r.waveform, spec.target_ms).unwrap();
        pass &= r.fidelity >= C7_FIDELITY && v >= C7_FIDELITY;
        pass &= r.waveform.max_amplitude() <= spec.max_rabi_hz * (1.0 + 1e-12);
        parts.push(format!(
            "{:?} {}×25 ns: {:.6}/{:.6}",
            spec.gate, spec.n_pieces, r.fidelity, v
        ));
    }
    let p = GrapeSpec::pi().problem().unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..C7_GRAD_SAMPLES as u64 {
        let wf = random_waveform(&p, 1000 + s);
        let g = grape_gradient(&p, &wf).unwrap();
        let fd = finite_difference_gradient(&p, &wf, 1e-6 * p.max_rabi_hz).unwrap();
        let diff: f64 = g
            .real
            .iter()
            .zip(&fd.real)
            .chain(g.imag.iter().zip(&fd.imag))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff / g.norm());
    }
    pass &= worst <= C7_GRAD_REL_TOL;
    let el = t.elapsed();
    check(
        pass && el < C7_MAX_TIME,
        format!(
            "{}; gradient worst rel. error {worst:.1e} over {C7_GRAD_SAMPLES}; {el:.2?}",
            parts.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let charge = simulate_charge_init(&ChargeReadoutModel::default(), 200_000, 8).unwrap();
    let chain = ReadoutChainModel::default();
    let cal = readout_calibration(&chain).unwrap();
    let n = 20_000;
    let b = simulate_repetitive_readout(&chain, NuclearState::Bright, n, 8).unwrap();
    let d = simulate_repetitive_readout(&chain, NuclearState::Dark, n, 9).unwrap();
    let stats = |v: &[u64]| {
        let m = v.iter().sum::<u64>() as f64 / v.len() as f64;
        let var = v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    };
    let (mb, vb) = stats(&b.photons);
    let (md, vd) = stats(&d.photons);
    let fr_mc = (mb - md).abs() / ((mb - md).powi(2) + 2.0 * (vb + vd)).sqrt();

    let cfg = ProtocolConfig::nv3();
    let run = run_experiment(&cfg, 8).unwrap();
    let ts = sensitivity_from_timeseries(
        &run.outcomes(),
        &run.signs(),
        run.amplitude(),
        &run.durations(),
        40,
    )
    .unwrap();
    let el = t.elapsed();
    let pass = charge.purity_without_feedback >= C8_PURITY_NO_FB.0
        && charge.purity_without_feedback <= C8_PURITY_NO_FB.1
        && charge.purity >= C8_PURITY_MIN
        && (cal.f_r - C8_FR_TARGET).abs() <= C8_FR_TOL
        && (fr_mc - C8_FR_TARGET).abs() <= C8_FR_TOL
        && ((ts.asymptote - C8_ETA_TARGET) / C8_ETA_TARGET).abs() <= C8_ETA_REL_TOL
        && ts.eta_slope.abs() <= C8_SLOPE_TOL
        && el < C8_MAX_TIME;
    check(
        pass,
        format!(
            "purity {:.3}→{:.3}, F_r {:.3} (MC {:.3}) at {} cycles, η {:.3} nT/√Hz, slope {:+.3}, {:.0} s simulated, {el:.2?}",
            charge.purity_without_feedback,
            charge.purity,
            cal.f_r,
            fr_mc,
            chain.n_cycles,
            ts.asymptote * 1e9,
            ts.eta_slope,
            ts.times.last().copied().unwrap_or(0.0),
        ),
    )
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn stochastic_outputs() -> Vec<u8> {
    let mut out = Vec::new();
    let mut cfg = ProtocolConfig::nv3();
    cfg.n_shots = 30_000;
    if let Some(s) = cfg.sweep.as_mut() {
        s.points = 11;
        s.shots_per_point = 300;
    }
    let run = run_experiment(&cfg, 21).unwrap();
    io::write_shots(&mut out, &run.shots).unwrap();
    out.extend(serde_json::to_vec(&run_fringe_sweep(&cfg, 21).unwrap()).unwrap());
    out.extend(
        serde_json::to_vec(&simulate_charge_init(&cfg.charge, 20_000, 21).unwrap()).unwrap(),
    );
    out.extend(
        serde_json::to_vec(
            &simulate_repetitive_readout(&cfg.readout, NuclearState::Dark, 2_000, 21).unwrap(),
        )
        .unwrap(),
    );
    let opts = BundleOptions {
        noise_sigma: 0.01,
        ..BundleOptions::default()
    };
    let truth = Lorentzian::centered(1e-18, 2.0 * PI * 50e3);
    out.extend(
        serde_json::to_vec(&coherence_bundle(&truth, Family::Xy8, &[8, 32], opts, 21).unwrap())
            .unwrap(),
    );
    let mut buf = Vec::new();
    io::write_depth_points(
        &mut buf,
        &depth_dataset(26.3e-9, DepthSynthOptions::default(), 21)
            .unwrap()
            .points,
    )
    .unwrap();
    out.extend(buf);
    let p = GrapeProblem::gate(
        SpinSystem::default(),
        nvmag::pulse::Gate::Pi,
        10,
        25e-9,
        10e6,
    )
    .unwrap();
    let spec = GrapeSpec::pi();
    out.extend(serde_json::to_vec(&optimize_multistart(&p, 1, spec.options(21)).unwrap()).unwrap());
    out
}

fn criterion_9() -> Outcome {
    let a = in_pool(1, stochastic_outputs);
    let b = in_pool(1, stochastic_outputs);
    let c = in_pool(4, stochastic_outputs);
    check(
        a == b && a == c,
        format!(
            "{} bytes; repeat identical: {}, 1 vs 4 workers identical: {}",
            a.len(),
            a == b,
            a == c
        ),
    )
}

// Runs without the libtest harness so the criterion lines always print.
fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ERL reproduction", criterion_1),
        ("magnetometer table audit", criterion_2),
        ("sensitivity budget", criterion_3),
        ("noise spectroscopy round trip", criterion_4),
        ("ERL noise line", criterion_5),
        ("depth fit round trip", criterion_6),
        ("GRAPE", criterion_7),
        ("protocol simulator", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!(
            "criterion {} ({name}): {}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all {} criteria pass", criteria.len());
}
