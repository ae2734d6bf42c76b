use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use nvmag::dd::{Family, SequenceDescriptor};
use nvmag::depth::{fit_depth, proton_signal_coherence, DepthFit, ProtonBathModel, Sample};
use nvmag::error::ErrorKind;
use nvmag::io;
use nvmag::manifest::RunManifest;
use nvmag::noise::{
    erl_margin_db, erl_noise_line, fit_lorentzian, plateau_level, spectrum_iterate_step,
    zeroth_spectrum, Lorentzian, NoiseSpectrum, SpectralDensity,
};
use nvmag::protocol::{readout_calibration, run_experiment, run_fringe_sweep, ProtocolConfig};
use nvmag::pulse::{optimize_multistart, verify_on_system, GrapeSpec};
use nvmag::sensitivity::{
    db_below_erl, erl_table_check, eta_from_budget, fit_fringe, sensitivity_from_timeseries,
};
use nvmag::synth::{self, BundleOptions, DepthSynthOptions, TABLE_DEPTHS};
use nvmag::{Error, Result};

#[derive(Parser)]
#[command(name = "nvmag", version, about = "NV-center magnetometry toolkit")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Configuration file for commands that take one (sense, grape).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the NV depth from a proton-dip dataset (CSV plus JSON sidecar).
    Depth { dataset: PathBuf },
    /// Noise spectrum from a directory of coherence curves.
    Noise(NoiseArgs),
    /// Optimize a control waveform.
    Grape(GrapeArgs),
    /// Simulate the sensing protocol and estimate the sensitivity.
    Sense(SenseArgs),
    /// Energy-resolution benchmark of a magnetometer table.
    Erl {
        /// Table CSV; the bundled table when omitted.
        table: Option<PathBuf>,
    },
    /// Synthetic datasets.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args)]
struct NoiseArgs {
    dir: PathBuf,
    /// Refinement steps after the zeroth-order estimate.
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    /// Effective sensing length for the ERL line (m).
    #[arg(long, default_value_t = synth::NV3_L_EFF)]
    l_eff: f64,
    /// Lower edge of the plateau band (Hz).
    #[arg(long, default_value_t = synth::PLATEAU_F_MIN_HZ)]
    f_min_hz: f64,
    /// Fit the Lorentzian center instead of pinning it at zero.
    #[arg(long)]
    free_center: bool,
}

#[derive(Args)]
struct GrapeArgs {
    /// Problem JSON (falls back to --config).
    problem: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct SenseArgs {
    /// Protocol JSON (falls back to --config, then the NV3 defaults).
    config: Option<PathBuf>,
    /// Override the number of sensitivity shots.
    #[arg(long)]
    shots: Option<usize>,
    /// Averaging windows in the η-vs-time output.
    #[arg(long, default_value_t = 40)]
    windows: usize,
    /// Also write every shot to shots.csv.
    #[arg(long)]
    write_shots: bool,
}

#[derive(Subcommand)]
enum GenCommand {
    /// Proton-dip dataset for one depth.
    Depth {
        #[arg(long, default_value_t = 31.7)]
        depth_nm: f64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0.1)]
        b0_tesla: f64,
        #[arg(long, value_enum, default_value_t = SampleArg::Glycerine)]
        sample: SampleArg,
        #[arg(long, default_value = "depth.csv")]
        name: String,
    },
    /// One dataset per characterized NV depth.
    DepthSuite {
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
    },
    /// Coherence curves of one family under a known spectrum.
    Coherence {
        #[arg(long, value_enum, default_value_t = SpectrumArg::Lorentzian)]
        spectrum: SpectrumArg,
        /// Peak of the Lorentzian (T²/Hz).
        #[arg(long, default_value_t = 1e-18)]
        s_max: f64,
        /// Half width of the Lorentzian (Hz).
        #[arg(long, default_value_t = 50e3)]
        hwhm_hz: f64,
        #[arg(long, default_value = "xy16")]
        family: String,
        #[arg(long, value_delimiter = ',', default_value = "16,64,128,512")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 12)]
        points: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Protocol configuration with the NV3 defaults.
    Protocol {
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Gate-optimization problem.
    GrapeProblem {
        #[arg(long, value_enum, default_value_t = GateArg::Pi)]
        gate: GateArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleArg {
    Glycerine,
    Oil,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpectrumArg {
    Lorentzian,
    Nv3,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateArg {
    Pi,
    HalfPi,
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    manifest: RunManifest,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&mut self, p: &Path) -> Result<()> {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
        self.manifest.add_input(p)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        io::write_json(&self.out(name), v)?;
        self.manifest.add_output(&self.out, name)
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        io::write_table(&self.out(name), header, rows)?;
        self.manifest.add_output(&self.out, name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        self.manifest.add_output(&self.out, name)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::parameter("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)?;
    let name = match &cli.command {
        Command::Depth { .. } => "depth",
        Command::Noise(_) => "noise",
        Command::Grape(_) => "grape",
        Command::Sense(_) => "sense",
        Command::Erl { .. } => "erl",
        Command::Gen(_) => "gen",
    };
    let mut ctx = Ctx {
        seed: cli.seed,
        out: cli.out.clone(),
        manifest: RunManifest::new(name, std::env::args().skip(1).collect(), cli.seed),
    };
    ctx.manifest.config = cli.config.as_ref().map(|p| p.display().to_string());
    match cli.command {
        Command::Depth { dataset } => cmd_depth(&mut ctx, &dataset)?,
        Command::Noise(a) => cmd_noise(&mut ctx, &a)?,
        Command::Grape(a) => {
            let p = a.problem.clone().or(cli.config).ok_or_else(|| {
                Error::Config("grape needs a problem file (positional or --config)".into())
            })?;
            cmd_grape(&mut ctx, &p, a.restarts)?
        }
        Command::Sense(a) => {
            let p = a.config.clone().or(cli.config);
            cmd_sense(&mut ctx, p.as_deref(), &a)?
        }
        Command::Erl { table } => cmd_erl(&mut ctx, table.as_deref())?,
        Command::Gen(g) => cmd_gen(&mut ctx, g)?,
    }
    ctx.manifest.write(&ctx.out)
}

fn cmd_depth(ctx: &mut Ctx, dataset: &Path) -> Result<()> {
    ctx.input(dataset)?;
    let data = io::load_depth_dataset(dataset)?;
    ctx.input(&io::sidecar_path(dataset))?;
    let fit = fit_depth(&data)?;
    let sc = &data.sidecar;
    let mut model = ProtonBathModel::new(sc.rho(), fit.depth_m, fit.t2n_star)?;
    model.diffusion = sc.diffusion();
    let taus: Vec<f64> = data.points.iter().map(|p| p.tau_s).collect();
    let curve = proton_signal_coherence(&model, sc.sequence, sc.n_pulses, sc.b0_tesla, &taus)?;
    let rows: Vec<Vec<f64>> = data
        .points
        .iter()
        .zip(&curve)
        .map(|(p, &m)| vec![p.tau_s, p.coherence, p.sigma, m])
        .collect();
    ctx.table(
        "depth_fit.csv",
        &["tau_s", "coherence", "sigma", "model"],
        &rows,
    )?;
    ctx.json("depth_report.json", &depth_report(&fit, &data.sidecar))?;
    println!("depth {:.2} ± {:.2} nm", fit.depth_nm(), fit.depth_err_nm());
    Ok(())
}

fn depth_report(fit: &DepthFit, sidecar: &nvmag::depth::DepthSidecar) -> serde_json::Value {
    json!({
        "depth_nm": fit.depth_nm(),
        "depth_err_nm": fit.depth_err_nm(),
        "fit": fit,
        "sidecar": sidecar,
        "axes": {"x": "tau_s", "y": "coherence", "model": "model"},
    })
}

fn cmd_noise(ctx: &mut Ctx, a: &NoiseArgs) -> Result<()> {
    ctx.input(&a.dir)?;
    let curves: Vec<_> = io::load_coherence_dir(&a.dir)?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let (s0, skipped) = zeroth_spectrum(&curves)?;
    let mut spec = s0.clone();
    let mut extrapolated = false;
    for _ in 0..a.iterations {
        let (next, ext) = spectrum_iterate_step(&spec, &s0, 2000)?;
        extrapolated |= ext;
        spec = next;
    }
    let lorentz = if spec.len() >= 4 {
        match fit_lorentzian(&spec, !a.free_center) {
            Ok(f) => Some(f),
            Err(e) if e.kind() == ErrorKind::Numerical => {
                eprintln!("warning: Lorentzian fit failed: {e}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let line = erl_noise_line(a.l_eff)?;
    let plateau = plateau_level(&spec, a.f_min_hz).ok();
    let margin = erl_margin_db(&spec, a.l_eff, a.f_min_hz).ok();

    let mut w = BufWriter::new(fs::File::create(ctx.out("spectrum.csv"))?);
    io::write_spectrum(&mut w, &spec)?;
    w.flush()?;
    drop(w);
    ctx.record("spectrum.csv")?;

    let model = lorentz.as_ref().map(|f| f.model());
    let rows: Vec<Vec<f64>> = spec
        .omega
        .iter()
        .zip(&spec.s)
        .map(|(&w, &s)| {
            let fit = model
                .as_ref()
                .map_or(f64::NAN, |m: &Lorentzian| m.density(w));
            vec![w, w / (2.0 * PI), s, fit, line]
        })
        .collect();
    ctx.table(
        "erl_comparison.csv",
        &[
            "omega_rad_s",
            "f_hz",
            "s_t2_per_hz",
            "lorentzian_t2_per_hz",
            "erl_line_t2_per_hz",
        ],
        &rows,
    )?;
    ctx.json(
        "spectrum.json",
        &json!({
            "axes": {"x": "omega_rad_s", "y": "s_t2_per_hz"},
            "units": {"omega": "rad/s", "s": "T^2/Hz"},
            "curves": curves.len(),
            "skipped_points": skipped,
            "iterations": a.iterations,
            "extrapolated": extrapolated,
            "lorentzian": lorentz,
            "l_eff_m": a.l_eff,
            "erl_line_t2_per_hz": line,
            "plateau_f_min_hz": a.f_min_hz,
            "plateau_t2_per_hz": plateau,
            "margin_below_erl_db": margin,
        }),
    )?;
    match margin {
        Some(m) => println!(
            "{} spectrum points, plateau {m:.2} dB below the ERL line",
            spec.len()
        ),
        None => println!("{} spectrum points", spec.len()),
    }
    Ok(())
}

fn cmd_grape(ctx: &mut Ctx, problem: &Path, restarts: Option<usize>) -> Result<()> {
    ctx.input(problem)?;
    let spec: GrapeSpec = io::read_json(problem).map_err(|e| match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", problem.display())),
        e => e,
    })?;
    let prob = spec.problem()?;
    let restarts = restarts.unwrap_or(spec.restarts);
    let res = optimize_multistart(&prob, restarts, spec.options(ctx.seed))?;
    let (verified, per_subspace) =
        verify_on_system(&spec.system(), &prob.target, &res.waveform, spec.target_ms)?;
    io::save_waveform(&ctx.out("waveform.csv"), &res.waveform)?;
    ctx.record("waveform.csv")?;
    let trace: Vec<Vec<f64>> = res
        .trace
        .iter()
        .enumerate()
        .map(|(i, f)| vec![i as f64, *f])
        .collect();
    ctx.table("trace.csv", &["iteration", "fidelity"], &trace)?;
    let best_effort = res.fidelity < spec.target_fidelity.min(0.9999);
    ctx.json(
        "grape_report.json",
        &json!({
            "problem": spec,
            "ensemble_fidelity": res.fidelity,
            "verified_fidelity": verified,
            "subspace_fidelity": per_subspace,
            "iterations": res.iterations,
            "converged": res.converged,
            "status": res.status,
            "best_effort": best_effort,
            "duration_s": prob.total_duration(),
            "max_amplitude_hz": res.waveform.max_amplitude(),
        }),
    )?;
    println!(
        "fidelity {:.6} (verified {:.6}){}",
        res.fidelity,
        verified,
        if best_effort { ", best effort" } else { "" }
    );
    Ok(())
}

fn cmd_sense(ctx: &mut Ctx, config: Option<&Path>, a: &SenseArgs) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            ctx.input(p)?;
            io::read_json::<ProtocolConfig>(p).map_err(|e| match e {
                Error::Json(j) => Error::Config(format!("{}: {j}", p.display())),
                e => e,
            })?
        }
        None => ProtocolConfig::nv3(),
    };
    if let Some(n) = a.shots {
        cfg.n_shots = n;
    }
    cfg.validate()?;
    let predicted = cfg.predicted_budget()?;
    let predicted_eta = eta_from_budget(&predicted)?;
    let cal = readout_calibration(&cfg.readout)?;

    let run = run_experiment(&cfg, ctx.seed)?;
    if a.write_shots {
        let f = BufWriter::new(fs::File::create(ctx.out("shots.csv"))?);
        io::write_shots(f, &run.shots)?;
        ctx.record("shots.csv")?;
    }
    let amplitude = run.amplitude();
    let ts = if amplitude > 0.0 {
        Some(sensitivity_from_timeseries(
            &run.outcomes(),
            &run.signs(),
            amplitude,
            &run.durations(),
            a.windows,
        )?)
    } else {
        None
    };
    let eta_rows: Vec<Vec<f64>> = ts
        .as_ref()
        .map(|t| {
            (0..t.times.len())
                .map(|i| vec![t.times[i], t.snr[i], t.eta[i], t.delta_b[i]])
                .collect()
        })
        .unwrap_or_default();
    ctx.table(
        "eta_vs_time.csv",
        &["time_s", "snr", "eta_t_per_sqrt_hz", "delta_b_t"],
        &eta_rows,
    )?;

    let mut fringe_fit = None;
    let mut fringe_note = None;
    if cfg.sweep.is_some() {
        let pts = run_fringe_sweep(&cfg, ctx.seed)?;
        let volts: Vec<f64> = pts.iter().map(|p| p.volts).collect();
        let counts: Vec<f64> = pts.iter().map(|p| p.mean_photons).collect();
        match fit_fringe(&volts, &counts, cfg.t_c) {
            Ok(f) => fringe_fit = Some(f),
            Err(e @ (Error::Degenerate(_) | Error::Ambiguous(_))) => {
                fringe_note = Some(e.to_string())
            }
            Err(e) => return Err(e),
        }
        let rows: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                let m = fringe_fit
                    .as_ref()
                    .map_or(f64::NAN, |f| f.eval(p.volts, nvmag::constants::GAMMA_E));
                vec![p.volts, p.mean_photons, p.std_error, p.shots as f64, m]
            })
            .collect();
        ctx.table(
            "fringe.csv",
            &["volts", "mean_photons", "std_error", "shots", "fit"],
            &rows,
        )?;
    }

    let total_time: f64 = run.durations().iter().sum();
    ctx.json(
        "budget.json",
        &json!({
            "predicted_budget": predicted,
            "predicted_eta_t_per_sqrt_hz": predicted_eta,
            "configured_budget": cfg.budget,
            "configured_budget_eta_t_per_sqrt_hz": cfg.budget.as_ref().map(eta_from_budget).transpose()?,
            "charge_purity": cfg.charge.purity_exact(),
            "readout": cal,
            "signal_amplitude_t": amplitude,
            "shots": cfg.n_shots,
            "total_time_s": total_time,
            "timeseries": ts,
            "configured_b_v_t_per_v": cfg.signal.b_v,
            "fringe_fit": fringe_fit,
            "fringe_note": fringe_note,
        }),
    )?;
    match &ts {
        Some(t) => println!(
            "eta {:.3} nT/√Hz (predicted {:.3}), slope {:+.3}",
            t.asymptote * 1e9,
            predicted_eta * 1e9,
            t.eta_slope
        ),
        None => println!(
            "no signal applied; predicted eta {:.3} nT/√Hz",
            predicted_eta * 1e9
        ),
    }
    Ok(())
}

fn cmd_erl(ctx: &mut Ctx, table: Option<&Path>) -> Result<()> {
    let records = match table {
        Some(p) => {
            ctx.input(p)?;
            io::load_magnetometer_table(p)?
        }
        None => io::read_magnetometer_table(io::BUNDLED_MAGNETOMETERS.as_bytes())?,
    };
    let report = erl_table_check(&records)?;
    let nv = io::read_nv_results(io::BUNDLED_NV_RESULTS.as_bytes())?;
    let nv_rows = nv
        .iter()
        .map(|r| {
            let e = nvmag::sensitivity::erl_compute(r.eta_t_per_sqrt_hz, r.depth_m)?;
            Ok(json!({
                "nv": r.nv,
                "l_eff_m": r.depth_m,
                "eta_t_per_sqrt_hz": r.eta_t_per_sqrt_hz,
                "e_r_hbar": e,
                "stored_e_r_hbar": r.e_r_hbar,
                "db_below_erl": db_below_erl(e).ok(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let path = ctx.out("erl_scatter.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::Csv)?;
    w.write_record(["l_eff_m", "e_r_hbar", "kind"])
        .map_err(Error::Csv)?;
    for r in &report.rows {
        w.write_record([
            r.l_eff_m.to_string(),
            r.recomputed.to_string(),
            r.kind.clone(),
        ])
        .map_err(Error::Csv)?;
    }
    for r in &nv {
        let e = nvmag::sensitivity::erl_compute(r.eta_t_per_sqrt_hz, r.depth_m)?;
        w.write_record([
            r.depth_m.to_string(),
            e.to_string(),
            format!("NV{} (measured)", r.nv),
        ])
        .map_err(Error::Csv)?;
    }
    w.flush()?;
    drop(w);
    ctx.record("erl_scatter.csv")?;
    ctx.json(
        "erl_report.json",
        &json!({
            "axes": {"x": "l_eff_m", "y": "e_r_hbar"},
            "rows": report.rows.len(),
            "max_rel_deviation": report.max_rel_deviation,
            "all_within_10_percent": report.all_within(0.1),
            "table": report,
            "nv_rows": nv_rows,
        }),
    )?;
    println!(
        "{} rows, max deviation {:.2}%",
        report.rows.len(),
        100.0 * report.max_rel_deviation
    );
    Ok(())
}

fn cmd_gen(ctx: &mut Ctx, g: GenCommand) -> Result<()> {
    match g {
        GenCommand::Depth {
            depth_nm,
            noise,
            b0_tesla,
            sample,
            name,
        } => {
            let opts = DepthSynthOptions {
                noise_sigma: noise,
                b0_tesla,
                sample: match sample {
                    SampleArg::Glycerine => Sample::Glycerine,
                    SampleArg::Oil => Sample::Oil,
                },
                ..DepthSynthOptions::default()
            };
            if !name.ends_with(".csv") {
                return Err(Error::parameter("name", "must end in .csv"));
            }
            let data = synth::depth_dataset(depth_nm * 1e-9, opts, ctx.seed)?;
            save_depth(ctx, &name, &data)?;
        }
        GenCommand::DepthSuite { noise } => {
            let opts = DepthSynthOptions {
                noise_sigma: noise,
                ..DepthSynthOptions::default()
            };
            for (i, (d, _)) in TABLE_DEPTHS.iter().enumerate() {
                let data = synth::depth_dataset(*d, opts, ctx.seed.wrapping_add(i as u64))?;
                save_depth(ctx, &format!("nv{}.csv", i + 1), &data)?;
            }
        }
        GenCommand::Coherence {
            spectrum,
            s_max,
            hwhm_hz,
            family,
            counts,
            points,
            noise,
        } => {
            let family: Family = family.parse()?;
            let opts = BundleOptions {
                points_per_curve: points,
                noise_sigma: noise,
                ..BundleOptions::default()
            };
            let (curves, truth) = match spectrum {
                SpectrumArg::Lorentzian => {
                    let m = Lorentzian::centered(s_max, 2.0 * PI * hwhm_hz);
                    let curves = synth::coherence_bundle(&m, family, &counts, opts, ctx.seed)?;
                    (
                        curves,
                        NoiseSpectrum::sample(&m, synth::log_omega_grid(1e3, 2e6, 80))?,
                    )
                }
                SpectrumArg::Nv3 => {
                    let m = synth::nv3_noise_model()?;
                    let curves = synth::coherence_bundle(&m, family, &counts, opts, ctx.seed)?;
                    (curves, synth::nv3_spectrum()?)
                }
            };
            for c in &curves {
                let name = curve_file(c.sequence);
                io::save_coherence(&ctx.out(&name), c)?;
                ctx.record(&name)?;
                ctx.record(&name.replace(".csv", ".json"))?;
            }
            fs::create_dir_all(ctx.out("truth"))?;
            io::save_spectrum(&ctx.out("truth/spectrum.csv"), &truth)?;
            ctx.record("truth/spectrum.csv")?;
        }
        GenCommand::Protocol { shots } => {
            let mut cfg = ProtocolConfig::nv3();
            if let Some(n) = shots {
                cfg.n_shots = n;
            }
            ctx.json("protocol.json", &cfg)?;
        }
        GenCommand::GrapeProblem { gate } => {
            let spec = match gate {
                GateArg::Pi => GrapeSpec::pi(),
                GateArg::HalfPi => GrapeSpec::half_pi(),
            };
            ctx.json("problem.json", &spec)?;
        }
    }
    Ok(())
}

fn curve_file(seq: SequenceDescriptor) -> String {
    format!(
        "{}_{:05}.csv",
        seq.family.to_string().to_lowercase(),
        seq.n_pulses
    )
}

fn save_depth(ctx: &mut Ctx, name: &str, data: &nvmag::depth::DepthDataset) -> Result<()> {
    io::save_depth_dataset(&ctx.out(name), data)?;
    ctx.record(name)?;
    ctx.record(&name.replace(".csv", ".json"))
}
