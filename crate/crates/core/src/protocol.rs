//! Monte Carlo simulation of the measurement protocol: charge-state feedback,
//! phase accumulation under dynamical decoupling and repetitive nuclear
//! readout with photon shot noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::GAMMA_E;
use crate::dd::{DdSequence, Family};
use crate::error::{ensure_positive, Error, Result};
use crate::sensitivity::SensitivityBudget;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean)
            .expect("finite positive mean")
            .sample(rng) as u64
    }
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::parameter(
            name,
            format!("must lie in [0, 1], got {p}"),
        ));
    }
    Ok(())
}

/// Photon statistics of the charge-state readout under orange illumination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChargeReadoutModel {
    /// Mean photons per readout window for NV⁻.
    pub mean_nv_minus: f64,
    /// Mean photons per readout window for NV⁰.
    pub mean_nv_zero: f64,
    pub read_window_s: f64,
    pub mixing_s: f64,
    /// NV⁻ fraction after a mixing pulse.
    pub equilibrium_fraction: f64,
    pub max_cycles: usize,
    /// Accept when the window count reaches this many photons.
    pub threshold: u64,
}

impl Default for ChargeReadoutModel {
    fn default() -> Self {
        ChargeReadoutModel {
            mean_nv_minus: 0.12,
            mean_nv_zero: 0.019,
            read_window_s: 970e-9,
            mixing_s: 95e-9,
            equilibrium_fraction: 0.74,
            max_cycles: 100,
            threshold: 1,
        }
    }
}

impl ChargeReadoutModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_nv_minus >= 0.0 && self.mean_nv_minus.is_finite()) {
            return Err(Error::parameter("mean_nv_minus", "must be non-negative"));
        }
        if !(self.mean_nv_zero >= 0.0 && self.mean_nv_zero.is_finite()) {
            return Err(Error::parameter("mean_nv_zero", "must be non-negative"));
        }
        ensure_positive("read_window_s", self.read_window_s)?;
        if !(self.mixing_s >= 0.0) {
            return Err(Error::parameter("mixing_s", "must be non-negative"));
        }
        check_probability("equilibrium_fraction", self.equilibrium_fraction)?;
        if self.max_cycles == 0 {
            return Err(Error::parameter("max_cycles", "must be at least 1"));
        }
        Ok(())
    }

    pub fn cycle_duration(&self) -> f64 {
        self.read_window_s + self.mixing_s
    }

    /// Probability that one window reaches the threshold.
    fn accept_probability(&self, mean: f64) -> f64 {
        // P(n ≥ k) = 1 − Σ_{n<k} e^{−μ} μⁿ/n!
        let mut term = (-mean).exp();
        let mut below = 0.0;
        for n in 0..self.threshold {
            below += term;
            term *= mean / (n + 1) as f64;
        }
        (1.0 - below).clamp(0.0, 1.0)
    }

    /// Exact NV⁻ fraction among accepted preparations.
    pub fn purity_exact(&self) -> f64 {
        let a_m = self.equilibrium_fraction * self.accept_probability(self.mean_nv_minus);
        let a_0 = (1.0 - self.equilibrium_fraction) * self.accept_probability(self.mean_nv_zero);
        if a_m + a_0 == 0.0 {
            self.equilibrium_fraction
        } else {
            a_m / (a_m + a_0)
        }
    }

    /// Exact probability of acceptance within `max_cycles`.
    pub fn success_exact(&self) -> f64 {
        let p = self.equilibrium_fraction * self.accept_probability(self.mean_nv_minus)
            + (1.0 - self.equilibrium_fraction) * self.accept_probability(self.mean_nv_zero);
        1.0 - (1.0 - p).powi(self.max_cycles as i32)
    }
}

/// Outcome of one feedback loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeInit {
    pub accepted: bool,
    pub nv_minus: bool,
    pub cycles: usize,
}

fn run_charge_init(
    model: &ChargeReadoutModel,
    rng: &mut ChaCha8Rng,
    mut on_count: impl FnMut(u64),
) -> ChargeInit {
    let mut nv_minus = false;
    for cycle in 1..=model.max_cycles {
        nv_minus = rng.random::<f64>() < model.equilibrium_fraction;
        let mean = if nv_minus {
            model.mean_nv_minus
        } else {
            model.mean_nv_zero
        };
        let n = poisson(rng, mean);
        on_count(n);
        if n >= model.threshold {
            return ChargeInit {
                accepted: true,
                nv_minus,
                cycles: cycle,
            };
        }
    }
    ChargeInit {
        accepted: false,
        nv_minus,
        cycles: model.max_cycles,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeInitStats {
    pub trials: usize,
    pub success_fraction: f64,
    /// P(NV⁻ | accepted).
    pub purity: f64,
    /// NV⁻ fraction without feedback.
    pub purity_without_feedback: f64,
    /// `cycles_histogram[k]` counts trials that stopped after k+1 cycles.
    pub cycles_histogram: Vec<u64>,
    /// Window counts over every readout window executed.
    pub photon_histogram: Vec<u64>,
}

pub fn simulate_charge_init(
    model: &ChargeReadoutModel,
    n_trials: usize,
    seed: u64,
) -> Result<ChargeInitStats> {
    model.validate()?;
    if n_trials == 0 {
        return Err(Error::parameter("n_trials", "must be positive"));
    }
    let results: Vec<(ChargeInit, Vec<u64>)> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let mut counts = Vec::new();
            let r = run_charge_init(model, &mut rng, |n| counts.push(n));
            (r, counts)
        })
        .collect();
    let mut cycles_histogram = vec![0u64; model.max_cycles];
    let mut photon_histogram = Vec::<u64>::new();
    let (mut accepted, mut good) = (0usize, 0usize);
    for (r, counts) in &results {
        cycles_histogram[r.cycles - 1] += 1;
        for &n in counts {
            let n = n as usize;
            if photon_histogram.len() <= n {
                photon_histogram.resize(n + 1, 0);
            }
            photon_histogram[n] += 1;
        }
        if r.accepted {
            accepted += 1;
            good += r.nv_minus as usize;
        }
    }
    Ok(ChargeInitStats {
        trials: n_trials,
        success_fraction: accepted as f64 / n_trials as f64,
        purity: if accepted == 0 {
            f64::NAN
        } else {
            good as f64 / accepted as f64
        },
        purity_without_feedback: model.equilibrium_fraction,
        cycles_histogram,
        photon_histogram,
    })
}

/// Nuclear memory state read by the repetitive readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuclearState {
    Bright,
    Dark,
}

/// Repeated SWAP-and-read cycles on the nuclear memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadoutChainModel {
    /// Mean photons per cycle for the bright nuclear state.
    pub mean_bright: f64,
    /// Mean photons per cycle for the dark nuclear state.
    pub mean_dark: f64,
    /// Probability that the nuclear state flips during one cycle.
    pub flip_probability: f64,
    pub cycle_s: f64,
    pub n_cycles: usize,
}

impl Default for ReadoutChainModel {
    fn default() -> Self {
        ReadoutChainModel {
            mean_bright: 0.06,
            mean_dark: 0.045,
            flip_probability: 1e-5,
            cycle_s: 0.576e-6,
            n_cycles: 2500,
        }
    }
}

impl ReadoutChainModel {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("mean_bright", self.mean_bright),
            ("mean_dark", self.mean_dark),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::parameter(n, "must be non-negative"));
            }
        }
        check_probability("flip_probability", self.flip_probability)?;
        ensure_positive("cycle_s", self.cycle_s)?;
        Ok(())
    }

    pub fn with_cycles(self, n_cycles: usize) -> Self {
        ReadoutChainModel { n_cycles, ..self }
    }

    pub fn duration(&self) -> f64 {
        self.n_cycles as f64 * self.cycle_s
    }

    fn mean(&self, s: NuclearState) -> f64 {
        match s {
            NuclearState::Bright => self.mean_bright,
            NuclearState::Dark => self.mean_dark,
        }
    }

    /// Total photons over `n_cycles` starting from `state`.
    pub fn sample(&self, state: NuclearState, rng: &mut ChaCha8Rng) -> u64 {
        let mut state = state;
        let mut remaining = self.n_cycles as u64;
        let mut total = 0;
        let geom = (self.flip_probability > 0.0)
            .then(|| Geometric::new(self.flip_probability).expect("probability in (0, 1]"));
        while remaining > 0 {
            // Cycles counted in the current state before a flip.
            let run = match &geom {
                Some(g) => g.sample(rng).saturating_add(1).min(remaining),
                None => remaining,
            };
            total += poisson(rng, self.mean(state) * run as f64);
            remaining -= run;
            state = match state {
                NuclearState::Bright => NuclearState::Dark,
                NuclearState::Dark => NuclearState::Bright,
            };
        }
        total
    }
}

/// Exact summed-count statistics of the readout chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutCalibration {
    pub n_cycles: usize,
    pub p_bright: Vec<f64>,
    pub p_dark: Vec<f64>,
    /// Bayes-optimal assignment fidelity ½Σ max(P_b, P_d).
    pub assignment_fidelity: f64,
    /// Δ/√(Δ² + 4σ̄²); the readout factor of the sensitivity budget.
    pub f_r: f64,
    pub mean_bright: f64,
    pub mean_dark: f64,
    pub var_bright: f64,
    pub var_dark: f64,
}

impl ReadoutCalibration {
    /// Bright (1), dark (0) or undecided (None) for a summed count.
    pub fn classify(&self, count: u64) -> Option<NuclearState> {
        let n = count as usize;
        let pb = self.p_bright.get(n).copied().unwrap_or(0.0);
        let pd = self.p_dark.get(n).copied().unwrap_or(0.0);
        if pb > pd {
            Some(NuclearState::Bright)
        } else if pd > pb {
            Some(NuclearState::Dark)
        } else if n >= self.p_bright.len() {
            // Beyond the truncated support: brighter is more likely bright.
            Some(if self.mean_bright >= self.mean_dark {
                NuclearState::Bright
            } else {
                NuclearState::Dark
            })
        } else {
            None
        }
    }
}

struct ChainDp {
    model: ReadoutChainModel,
    // dist[start][state][count]
    dist: [[Vec<f64>; 2]; 2],
    pois: [Vec<f64>; 2],
    cycles: usize,
}

impl ChainDp {
    fn new(model: ReadoutChainModel, max_cycles: usize) -> Self {
        let mu_max = model.mean_bright.max(model.mean_dark);
        let total = mu_max * max_cycles as f64;
        let len = (total + 14.0 * total.sqrt() + 30.0).ceil() as usize;
        let pois_row = |mu: f64| {
            let mut p = vec![(-mu).exp()];
            while p.len() < 40 && p[p.len() - 1] > 1e-18 {
                let k = p.len() as f64;
                let next = p[p.len() - 1] * mu / k;
                p.push(next);
            }
            p
        };
        let start = |s: usize| {
            let mut a = vec![0.0; len];
            let b = vec![0.0; len];
            a[0] = 1.0;
            if s == 0 {
                [a, b]
            } else {
                [b, a]
            }
        };
        ChainDp {
            model,
            dist: [start(0), start(1)],
            pois: [pois_row(model.mean_bright), pois_row(model.mean_dark)],
            cycles: 0,
        }
    }

    fn step(&mut self) {
        let q = self.model.flip_probability;
        for d in self.dist.iter_mut() {
            let len = d[0].len();
            let mut counted = [vec![0.0; len], vec![0.0; len]];
            for s in 0..2 {
                let p = &self.pois[s];
                for (n, &w) in d[s].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (k, &pk) in p.iter().enumerate() {
                        if n + k < len {
                            counted[s][n + k] += w * pk;
                        }
                    }
                }
            }
            for n in 0..len {
                let (b, dk) = (counted[0][n], counted[1][n]);
                d[0][n] = (1.0 - q) * b + q * dk;
                d[1][n] = (1.0 - q) * dk + q * b;
            }
        }
        self.cycles += 1;
    }

    fn calibration(&self) -> ReadoutCalibration {
        let marginal = |start: usize| -> Vec<f64> {
            self.dist[start][0]
                .iter()
                .zip(&self.dist[start][1])
                .map(|(a, b)| a + b)
                .collect()
        };
        let pb = marginal(0);
        let pd = marginal(1);
        let moments = |p: &[f64]| {
            let m: f64 = p.iter().enumerate().map(|(n, w)| n as f64 * w).sum();
            let v: f64 = p
                .iter()
                .enumerate()
                .map(|(n, w)| (n as f64 - m).powi(2) * w)
                .sum();
            (m, v)
        };
        let (mb, vb) = moments(&pb);
        let (md, vd) = moments(&pd);
        let assignment = 0.5 * pb.iter().zip(&pd).map(|(a, b)| a.max(*b)).sum::<f64>();
        let delta = (mb - md).abs();
        let f_r = if delta == 0.0 {
            0.0
        } else {
            delta / (delta * delta + 2.0 * (vb + vd)).sqrt()
        };
        ReadoutCalibration {
            n_cycles: self.cycles,
            p_bright: pb,
            p_dark: pd,
            assignment_fidelity: assignment.min(1.0),
            f_r,
            mean_bright: mb,
            mean_dark: md,
            var_bright: vb,
            var_dark: vd,
        }
    }
}

/// Exact count distributions for `model.n_cycles` cycles.
pub fn readout_calibration(model: &ReadoutChainModel) -> Result<ReadoutCalibration> {
    model.validate()?;
    let mut dp = ChainDp::new(*model, model.n_cycles);
    for _ in 0..model.n_cycles {
        dp.step();
    }
    Ok(dp.calibration())
}

/// `(n_cycles, assignment fidelity, F_r)` for every cycle count up to `max_cycles`
/// in steps of `stride`.
pub fn readout_curve(
    model: &ReadoutChainModel,
    max_cycles: usize,
    stride: usize,
) -> Result<Vec<(usize, f64, f64)>> {
    model.validate()?;
    let stride = stride.max(1);
    let mut dp = ChainDp::new(*model, max_cycles);
    let mut out = Vec::new();
    for n in 0..=max_cycles {
        if n % stride == 0 || n == max_cycles {
            let c = dp.calibration();
            out.push((n, c.assignment_fidelity, c.f_r));
        }
        if n < max_cycles {
            dp.step();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutStats {
    pub true_state: NuclearState,
    /// Fraction of shots assigned to the true state (undecided counts as ½).
    pub assignment_fidelity: f64,
    pub photons: Vec<u64>,
}

pub fn simulate_repetitive_readout(
    model: &ReadoutChainModel,
    true_state: NuclearState,
    n_shots: usize,
    seed: u64,
) -> Result<ReadoutStats> {
    let cal = readout_calibration(model)?;
    if n_shots == 0 {
        return Err(Error::parameter("n_shots", "must be positive"));
    }
    let photons: Vec<u64> = (0..n_shots)
        .into_par_iter()
        .map(|i| model.sample(true_state, &mut rng_for(seed, i as u64)))
        .collect();
    let score: f64 = photons
        .iter()
        .map(|&n| match cal.classify(n) {
            Some(s) if s == true_state => 1.0,
            Some(_) => 0.0,
            None => 0.5,
        })
        .sum();
    Ok(ReadoutStats {
        true_state,
        assignment_fidelity: score / n_shots as f64,
        photons,
    })
}

/// Time dependence of the applied test field within one phase-accumulation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalShape {
    /// Square wave flipping at every π pulse.
    SquareSync,
    /// Cosine at the passband frequency, in phase with the toggling function.
    SineSync,
    Dc,
}

/// Field applied through the coil: amplitude `B = B_V · V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// T/V
    pub b_v: f64,
    pub shape: SignalShape,
    /// Coil voltage for the sensitivity run.
    pub volts: f64,
    /// Alternate the sign of the field on consecutive shots.
    #[serde(default = "default_true")]
    pub alternate: bool,
}

fn default_true() -> bool {
    true
}

/// Coherence at the accumulation time, `exp(−(t/T₂)^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceModel {
    pub t2: f64,
    #[serde(default = "one")]
    pub stretch: f64,
}

fn one() -> f64 {
    1.0
}

impl CoherenceModel {
    pub fn eval(&self, t: f64) -> f64 {
        (-(t / self.t2).powf(self.stretch)).exp()
    }
}

/// Voltage sweep for the fringe calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeSweep {
    pub v_min: f64,
    pub v_max: f64,
    pub points: usize,
    pub shots_per_point: usize,
}

/// Full protocol description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub family: Family,
    pub n_pulses: usize,
    /// Phase-accumulation time (s).
    pub t_c: f64,
    pub coherence: CoherenceModel,
    #[serde(default)]
    pub charge: ChargeReadoutModel,
    #[serde(default)]
    pub readout: ReadoutChainModel,
    /// Electron polarization after optical pumping.
    pub spin_init_fidelity: f64,
    /// Per-shot time not covered by charge feedback, accumulation or readout (s).
    pub fixed_overhead_s: f64,
    pub signal: SignalConfig,
    /// Number of shots for the sensitivity run.
    pub n_shots: usize,
    #[serde(default)]
    pub sweep: Option<FringeSweep>,
    /// Optional budget to cross-check against the protocol.
    #[serde(default)]
    pub budget: Option<SensitivityBudget>,
}

impl ProtocolConfig {
    /// NV3-like protocol: XY16-512, 1.8 ms accumulation, 2025 readout cycles.
    pub fn nv3() -> Self {
        let charge = ChargeReadoutModel::default();
        let readout = ReadoutChainModel::default().with_cycles(2025);
        let mut cfg = ProtocolConfig {
            family: Family::Xy16,
            n_pulses: 512,
            t_c: 1.8e-3,
            coherence: CoherenceModel {
                t2: 2.0e-3,
                stretch: 1.0,
            },
            charge,
            readout,
            spin_init_fidelity: 0.98,
            fixed_overhead_s: 0.0,
            signal: SignalConfig {
                b_v: 112e-9,
                shape: SignalShape::SquareSync,
                volts: 1e-9 / 112e-9,
                alternate: true,
            },
            n_shots: 540_000,
            sweep: Some(FringeSweep {
                v_min: -0.2,
                v_max: 0.2,
                points: 81,
                shots_per_point: 2000,
            }),
            budget: None,
        };
        // Total shot time 3.336 ms on average.
        cfg.fixed_overhead_s = 3.336e-3 - cfg.t_c - readout.duration() - cfg.mean_charge_time();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.sequence()?;
        self.charge.validate()?;
        self.readout.validate()?;
        ensure_positive("coherence.t2", self.coherence.t2)?;
        ensure_positive("coherence.stretch", self.coherence.stretch)?;
        check_probability("spin_init_fidelity", self.spin_init_fidelity)?;
        if !(self.fixed_overhead_s >= 0.0 && self.fixed_overhead_s.is_finite()) {
            return Err(Error::Config(
                "fixed_overhead_s must be non-negative".into(),
            ));
        }
        if !self.signal.b_v.is_finite() || !self.signal.volts.is_finite() {
            return Err(Error::Config("signal parameters must be finite".into()));
        }
        if self.n_shots == 0 {
            return Err(Error::Config("n_shots must be positive".into()));
        }
        if let Some(s) = &self.sweep {
            if s.points < 2 || s.shots_per_point == 0 || !(s.v_max > s.v_min) {
                return Err(Error::Config(
                    "fringe sweep needs ≥ 2 points over a positive span".into(),
                ));
            }
        }
        if let Some(b) = &self.budget {
            b.validate()?;
            if ((b.t_c - self.t_c) / self.t_c).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "budget T_C {} s does not match protocol T_C {} s",
                    b.t_c, self.t_c
                )));
            }
        }
        Ok(())
    }

    pub fn sequence(&self) -> Result<DdSequence> {
        DdSequence::new(self.family, self.n_pulses, self.t_c)
            .map_err(|e| Error::Config(format!("sequence: {e}")))
    }

    /// Mean duration of the charge feedback loop.
    pub fn mean_charge_time(&self) -> f64 {
        let m = &self.charge;
        let p = m.equilibrium_fraction * m.accept_probability(m.mean_nv_minus)
            + (1.0 - m.equilibrium_fraction) * m.accept_probability(m.mean_nv_zero);
        // E[min(Geom(p), max)]
        let expected_cycles = if p == 0.0 {
            m.max_cycles as f64
        } else {
            (1.0 - (1.0 - p).powi(m.max_cycles as i32)) / p
        };
        expected_cycles * m.cycle_duration()
    }

    /// Phase per tesla of signal amplitude, γ_e ∫ shape·toggling dt.
    pub fn phase_per_tesla(&self) -> Result<f64> {
        let seq = self.sequence()?;
        let tau = seq.tau();
        let integral: f64 = match self.signal.shape {
            SignalShape::SquareSync => seq.total_time,
            SignalShape::Dc => seq
                .toggling_segments()
                .iter()
                .map(|(a, b, s)| s * (b - a))
                .sum(),
            SignalShape::SineSync => {
                let w = std::f64::consts::PI / tau;
                seq.toggling_segments()
                    .iter()
                    .map(|(a, b, s)| s * ((w * b).sin() - (w * a).sin()) / w)
                    .sum()
            }
        };
        Ok(GAMMA_E * integral)
    }

    /// Budget implied by the models (mean overhead, exact readout factor).
    pub fn predicted_budget(&self) -> Result<SensitivityBudget> {
        self.validate()?;
        let cal = readout_calibration(&self.readout)?;
        let f_i = self.charge.purity_exact() * self.spin_init_fidelity;
        let mut b = SensitivityBudget::new(
            self.t_c,
            self.coherence.eval(self.t_c),
            f_i,
            cal.f_r,
            self.fixed_overhead_s + self.readout.duration() + self.mean_charge_time(),
        )?;
        // The protocol senses with the configured signal shape.
        let seq_factor = self.phase_per_tesla()? / (GAMMA_E * self.t_c);
        b.c *= seq_factor.abs();
        Ok(b)
    }
}

/// One simulated shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub index: u64,
    pub volts: f64,
    pub sign: f64,
    pub charge_cycles: usize,
    pub charge_accepted: bool,
    pub nv_minus: bool,
    pub phase_rad: f64,
    pub bright: bool,
    pub photons: u64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub seed: u64,
    pub config: ProtocolConfig,
    pub shots: Vec<ShotRecord>,
}

impl ExperimentRun {
    pub fn outcomes(&self) -> Vec<f64> {
        self.shots.iter().map(|s| s.photons as f64).collect()
    }

    pub fn signs(&self) -> Vec<f64> {
        self.shots.iter().map(|s| s.sign).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.shots.iter().map(|s| s.duration_s).collect()
    }

    /// Applied field amplitude (T).
    pub fn amplitude(&self) -> f64 {
        (self.config.signal.b_v * self.config.signal.volts).abs()
    }
}

struct ShotContext {
    phase_per_volt: f64,
    contrast: f64,
    readout_time: f64,
}

fn simulate_shot(
    cfg: &ProtocolConfig,
    ctx: &ShotContext,
    seed: u64,
    index: u64,
    volts: f64,
    sign: f64,
) -> ShotRecord {
    let mut rng = rng_for(seed, index);
    let init = run_charge_init(&cfg.charge, &mut rng, |_| {});
    let phase = ctx.phase_per_volt * volts * sign;
    let p_bright = if init.nv_minus {
        0.5 * (1.0 + cfg.spin_init_fidelity * ctx.contrast * phase.sin())
    } else {
        0.5
    };
    let bright = rng.random::<f64>() < p_bright;
    let state = if bright {
        NuclearState::Bright
    } else {
        NuclearState::Dark
    };
    let photons = cfg.readout.sample(state, &mut rng);
    ShotRecord {
        index,
        volts,
        sign,
        charge_cycles: init.cycles,
        charge_accepted: init.accepted,
        nv_minus: init.nv_minus,
        phase_rad: phase,
        bright,
        photons,
        duration_s: init.cycles as f64 * cfg.charge.cycle_duration()
            + cfg.t_c
            + ctx.readout_time
            + cfg.fixed_overhead_s,
    }
}

fn context(cfg: &ProtocolConfig) -> Result<ShotContext> {
    cfg.validate()?;
    Ok(ShotContext {
        phase_per_volt: cfg.phase_per_tesla()? * cfg.signal.b_v,
        contrast: cfg.coherence.eval(cfg.t_c),
        readout_time: cfg.readout.duration(),
    })
}

/// Sensitivity run: `cfg.n_shots` shots at `cfg.signal.volts`, sign
/// alternating between shots when configured.
pub fn run_experiment(cfg: &ProtocolConfig, seed: u64) -> Result<ExperimentRun> {
    let ctx = context(cfg)?;
    let shots = (0..cfg.n_shots as u64)
        .into_par_iter()
        .map(|i| {
            let sign = if cfg.signal.alternate && i % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            simulate_shot(cfg, &ctx, seed, i, cfg.signal.volts, sign)
        })
        .collect();
    Ok(ExperimentRun {
        seed,
        config: cfg.clone(),
        shots,
    })
}

/// One point of a fringe sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub volts: f64,
    pub mean_photons: f64,
    pub std_error: f64,
    pub shots: usize,
}

/// Voltage sweep with a constant-sign field; shot streams are offset so
/// they never overlap the sensitivity run.
pub fn run_fringe_sweep(cfg: &ProtocolConfig, seed: u64) -> Result<Vec<FringePoint>> {
    let ctx = context(cfg)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no fringe sweep configured".into()))?;
    let base = 1u64 << 40;
    (0..sweep.points)
        .into_par_iter()
        .map(|p| {
            let v =
                sweep.v_min + (sweep.v_max - sweep.v_min) * p as f64 / (sweep.points - 1) as f64;
            let (mut s, mut s2) = (0.0, 0.0);
            for k in 0..sweep.shots_per_point {
                let idx = base + (p * sweep.shots_per_point + k) as u64;
                let n = simulate_shot(cfg, &ctx, seed, idx, v, 1.0).photons as f64;
                s += n;
                s2 += n * n;
            }
            let m = sweep.shots_per_point as f64;
            let mean = s / m;
            let var = if m > 1.0 {
                (s2 - m * mean * mean) / (m - 1.0)
            } else {
                0.0
            };
            Ok(FringePoint {
                volts: v,
                mean_photons: mean,
                std_error: (var.max(0.0) / m).sqrt(),
                shots: sweep.shots_per_point,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_feedback_raises_purity() {
        let m = ChargeReadoutModel::default();
        let s = simulate_charge_init(&m, 200_000, 1).unwrap();
        assert!(s.purity >= 0.94, "{}", s.purity);
        assert!((s.purity - m.purity_exact()).abs() < 0.003);
        assert!(s.success_fraction > 0.99);
        assert_eq!(s.cycles_histogram.iter().sum::<u64>(), 200_000);
    }

    #[test]
    fn uninformative_photons_leave_purity() {
        let m = ChargeReadoutModel {
            mean_nv_zero: 0.12,
            ..Default::default()
        };
        assert!((m.purity_exact() - 0.74).abs() < 1e-12);
        let s = simulate_charge_init(&m, 100_000, 2).unwrap();
        assert!((s.purity - 0.74).abs() < 0.01);
    }

    #[test]
    fn huge_threshold_never_accepts() {
        let m = ChargeReadoutModel {
            threshold: 1000,
            ..Default::default()
        };
        let s = simulate_charge_init(&m, 1000, 3).unwrap();
        assert_eq!(s.success_fraction, 0.0);
    }

    #[test]
    fn readout_calibration_defaults() {
        let c = readout_calibration(&ReadoutChainModel::default()).unwrap();
        assert!((c.f_r - 0.84).abs() < 0.02, "{}", c.f_r);
        assert!(c.assignment_fidelity > 0.5 && c.assignment_fidelity < 1.0);
        let total: f64 = c.p_bright.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_cycles_is_a_coin_flip() {
        let m = ReadoutChainModel::default().with_cycles(0);
        let c = readout_calibration(&m).unwrap();
        assert_eq!(c.assignment_fidelity, 0.5);
        let s = simulate_repetitive_readout(&m, NuclearState::Bright, 100, 0).unwrap();
        assert_eq!(s.assignment_fidelity, 0.5);
    }

    #[test]
    fn readout_monte_carlo_matches_exact() {
        let m = ReadoutChainModel::default();
        let c = readout_calibration(&m).unwrap();
        let b = simulate_repetitive_readout(&m, NuclearState::Bright, 40_000, 5).unwrap();
        let d = simulate_repetitive_readout(&m, NuclearState::Dark, 40_000, 6).unwrap();
        let mc = 0.5 * (b.assignment_fidelity + d.assignment_fidelity);
        assert!(
            (mc - c.assignment_fidelity).abs() < 0.01,
            "{mc} {}",
            c.assignment_fidelity
        );
        let mean = b.photons.iter().sum::<u64>() as f64 / 40_000.0;
        assert!((mean - c.mean_bright).abs() < 0.2);
    }

    #[test]
    fn readout_without_flips_is_monotone() {
        let m = ReadoutChainModel {
            flip_probability: 0.0,
            mean_bright: 0.3,
            mean_dark: 0.1,
            ..Default::default()
        };
        let curve = readout_curve(&m, 400, 1).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12);
            assert!(w[1].2 >= w[0].2 - 1e-12);
        }
        assert!(curve.last().unwrap().1 > 0.99);
    }

    #[test]
    fn readout_with_flips_has_interior_optimum() {
        let m = ReadoutChainModel {
            flip_probability: 2e-3,
            mean_bright: 0.3,
            mean_dark: 0.1,
            ..Default::default()
        };
        let curve = readout_curve(&m, 3000, 10).unwrap();
        let (imax, _) = curve
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .2.total_cmp(&b.1 .2))
            .unwrap();
        assert!(imax > 0 && imax < curve.len() - 1);
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut cfg = ProtocolConfig::nv3();
        cfg.n_shots = 2000;
        let a = run_experiment(&cfg, 11).unwrap();
        let b = run_experiment(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = run_experiment(&cfg, 12).unwrap();
        assert_ne!(a.shots, c.shots);
    }

    #[test]
    fn nv3_overhead_matches_table() {
        let cfg = ProtocolConfig::nv3();
        let b = cfg.predicted_budget().unwrap();
        assert!((b.t_ir - 1.536e-3).abs() < 1e-9);
        assert!(cfg.fixed_overhead_s > 0.0);
    }

    #[test]
    fn budget_mismatch_is_a_config_error() {
        let mut cfg = ProtocolConfig::nv3();
        cfg.budget = Some(SensitivityBudget::new(1.0e-3, 0.4, 0.9, 0.8, 1e-3).unwrap());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.budget = None;
        cfg.n_pulses = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn signal_shape_factors() {
        let mut cfg = ProtocolConfig::nv3();
        let square = cfg.phase_per_tesla().unwrap();
        assert!((square / (GAMMA_E * cfg.t_c) - 1.0).abs() < 1e-12);
        cfg.signal.shape = SignalShape::SineSync;
        let sine = cfg.phase_per_tesla().unwrap();
        assert!((sine / square - 2.0 / std::f64::consts::PI).abs() < 1e-6);
        cfg.signal.shape = SignalShape::Dc;
        assert!(cfg.phase_per_tesla().unwrap().abs() < 1e-6 * square);
    }
}
