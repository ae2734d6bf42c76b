//! GRAPE optimization of piecewise-constant shaped pulses on a two-level
//! subspace.
//!
//! Each piece k carries a complex Rabi amplitude `u_k = re_k + i im_k` (Hz).
//! For an ensemble member with detuning δ and amplitude scale s the piece
//! Hamiltonian is `π s (re σ_x + im σ_y) + π δ σ_z` (δ in Hz), matching
//! [`crate::spin::two_level_hamiltonian`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::spin::{
    build_rotating_frame_hamiltonian, propagator, two_level_hamiltonian, CMatrix, Channel,
    DriveTerm, LevelPair, RwaOptions, SpinSystem, C64,
};

/// One member of the robustness ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub detuning_hz: f64,
    pub amplitude_scale: f64,
    pub weight: f64,
}

/// Target gate on the two-level subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// π rotation about x.
    Pi,
    /// π/2 rotation about x.
    HalfPi,
}

impl Gate {
    pub fn angle(self) -> f64 {
        match self {
            Gate::Pi => PI,
            Gate::HalfPi => PI / 2.0,
        }
    }

    /// `exp(−i θ σ_x / 2)`.
    pub fn unitary(self) -> CMatrix {
        x_rotation(self.angle())
    }
}

pub fn x_rotation(theta: f64) -> CMatrix {
    let (s, c) = (0.5 * theta).sin_cos();
    CMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(c, 0.0),
            C64::new(0.0, -s),
            C64::new(0.0, -s),
            C64::new(c, 0.0),
        ],
    )
}

#[derive(Debug, Clone)]
pub struct GrapeProblem {
    pub sys: SpinSystem,
    pub target: CMatrix,
    pub n_pieces: usize,
    pub piece_duration: f64,
    pub max_rabi_hz: f64,
    pub ensemble: Vec<EnsembleMember>,
}

/// Detunings `{0, ±A∥/2}` with equal weight: the two ¹⁵N subspaces driven at
/// their mean frequency, plus the midpoint.
pub fn default_ensemble(sys: &SpinSystem) -> Vec<EnsembleMember> {
    let half = 0.5 * sys.a_parallel / (2.0 * PI);
    [-half, 0.0, half]
        .iter()
        .map(|&d| EnsembleMember {
            detuning_hz: d,
            amplitude_scale: 1.0,
            weight: 1.0 / 3.0,
        })
        .collect()
}

impl GrapeProblem {
    pub fn new(
        sys: SpinSystem,
        target: CMatrix,
        n_pieces: usize,
        piece_duration: f64,
        max_rabi_hz: f64,
        ensemble: Vec<EnsembleMember>,
    ) -> Result<Self> {
        let p = GrapeProblem {
            sys,
            target,
            n_pieces,
            piece_duration,
            max_rabi_hz,
            ensemble,
        };
        p.validate()?;
        Ok(p)
    }

    /// Gate problem with the default `{0, ±A∥/2}` ensemble.
    pub fn gate(
        sys: SpinSystem,
        gate: Gate,
        n_pieces: usize,
        piece_duration: f64,
        max_rabi_hz: f64,
    ) -> Result<Self> {
        let ensemble = default_ensemble(&sys);
        Self::new(
            sys,
            gate.unitary(),
            n_pieces,
            piece_duration,
            max_rabi_hz,
            ensemble,
        )
    }

    /// Single resonant member.
    pub fn singleton(
        sys: SpinSystem,
        target: CMatrix,
        n_pieces: usize,
        piece_duration: f64,
        max_rabi_hz: f64,
    ) -> Result<Self> {
        let ensemble = vec![EnsembleMember {
            detuning_hz: 0.0,
            amplitude_scale: 1.0,
            weight: 1.0,
        }];
        Self::new(sys, target, n_pieces, piece_duration, max_rabi_hz, ensemble)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pieces == 0 {
            return Err(Error::parameter("n_pieces", "must be at least 1"));
        }
        ensure_positive("piece_duration", self.piece_duration)?;
        ensure_positive("max_rabi_hz", self.max_rabi_hz)?;
        if self.target.shape() != (2, 2) {
            return Err(Error::Shape {
                expected: "2x2 target".into(),
                found: format!("{}x{}", self.target.nrows(), self.target.ncols()),
            });
        }
        if crate::spin::unitarity_defect(&self.target) > 1e-10 {
            return Err(Error::parameter("target", "must be unitary"));
        }
        if self.ensemble.is_empty() {
            return Err(Error::parameter("ensemble", "must not be empty"));
        }
        let wsum: f64 = self.ensemble.iter().map(|m| m.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 || self.ensemble.iter().any(|m| m.weight < 0.0) {
            return Err(Error::parameter(
                "ensemble",
                format!("weights must be non-negative and sum to 1, got {wsum}"),
            ));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.n_pieces as f64 * self.piece_duration
    }

    fn check(&self, wf: &Waveform) -> Result<()> {
        if wf.len() != self.n_pieces || wf.imag_hz.len() != wf.real_hz.len() {
            return Err(Error::Shape {
                expected: format!("{} pieces", self.n_pieces),
                found: format!("{}/{}", wf.real_hz.len(), wf.imag_hz.len()),
            });
        }
        Ok(())
    }
}

/// Piecewise-constant complex Rabi amplitude (Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub real_hz: Vec<f64>,
    pub imag_hz: Vec<f64>,
    pub piece_duration: f64,
}

impl Waveform {
    pub fn zeros(n: usize, piece_duration: f64) -> Self {
        Waveform {
            real_hz: vec![0.0; n],
            imag_hz: vec![0.0; n],
            piece_duration,
        }
    }

    pub fn len(&self) -> usize {
        self.real_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real_hz.is_empty()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.real_hz
            .iter()
            .zip(&self.imag_hz)
            .map(|(r, i)| r.hypot(*i))
            .fold(0.0, f64::max)
    }

    /// Radially project every piece into the disc of radius `max`.
    pub fn project(&mut self, max: f64) {
        for (r, i) in self.real_hz.iter_mut().zip(self.imag_hz.iter_mut()) {
            let a = r.hypot(*i);
            if a > max {
                *r *= max / a;
                *i *= max / a;
            }
        }
    }

    /// Multiply every piece by `e^{iθ}`.
    pub fn rotate_phase(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Waveform {
            real_hz: self
                .real_hz
                .iter()
                .zip(&self.imag_hz)
                .map(|(r, i)| c * r - s * i)
                .collect(),
            imag_hz: self
                .real_hz
                .iter()
                .zip(&self.imag_hz)
                .map(|(r, i)| s * r + c * i)
                .collect(),
            piece_duration: self.piece_duration,
        }
    }

    /// Amplitude (Hz) and phase (rad) per piece.
    pub fn polar(&self) -> (Vec<f64>, Vec<f64>) {
        self.real_hz
            .iter()
            .zip(&self.imag_hz)
            .map(|(r, i)| (r.hypot(*i), i.atan2(*r)))
            .unzip()
    }
}

fn piece_hamiltonian(member: &EnsembleMember, re: f64, im: f64) -> CMatrix {
    let s = member.amplitude_scale;
    two_level_hamiltonian(2.0 * PI * member.detuning_hz, s * re, s * im)
}

fn step(h: &CMatrix, dt: f64) -> CMatrix {
    (h * C64::new(0.0, -dt)).exp()
}

/// `exp(A)` and its directional derivative along `B` (Van Loan block form).
pub fn exp_derivative_van_loan(a: &CMatrix, b: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let mut big = CMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((n, n), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(b);
    let x = big.exp();
    (
        x.view((0, 0), (n, n)).into_owned(),
        x.view((0, n), (n, n)).into_owned(),
    )
}

/// Pauli-vector form of one piece: `H dt = v · σ`.
fn rotation_vector(member: &EnsembleMember, re: f64, im: f64, dt: f64) -> [f64; 3] {
    let s = member.amplitude_scale;
    [
        PI * s * re * dt,
        PI * s * im * dt,
        PI * member.detuning_hz * dt,
    ]
}

fn pauli(j: usize) -> [[C64; 2]; 2] {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match j {
        0 => [[z, one], [one, z]],
        1 => [[z, -i], [i, z]],
        _ => [[one, z], [z, -one]],
    }
}

type M2 = [[C64; 2]; 2];

fn m2_to_matrix(m: &M2) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

/// `U = exp(−i v·σ)` and `∂U/∂v_j` for j = x, y in closed form.
fn su2_exp_with_derivatives(v: [f64; 3]) -> (M2, [M2; 2]) {
    let th = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (sin, cos) = th.sin_cos();
    // sinc(θ) = sin θ/θ and (cos θ − sinc θ)/θ², with series near θ = 0.
    let (sinc, c2) = if th < 1e-4 {
        let t2 = th * th;
        (1.0 - t2 / 6.0, -1.0 / 3.0 + t2 / 30.0)
    } else {
        (sin / th, (cos - sin / th) / (th * th))
    };
    let mi = C64::new(0.0, -1.0);
    let mut vs = [[C64::new(0.0, 0.0); 2]; 2];
    for (j, &vj) in v.iter().enumerate() {
        let p = pauli(j);
        for r in 0..2 {
            for c in 0..2 {
                vs[r][c] += p[r][c] * vj;
            }
        }
    }
    let mut u = [[C64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let id = if r == c { cos } else { 0.0 };
            u[r][c] = C64::new(id, 0.0) + mi * sinc * vs[r][c];
        }
    }
    let mut d = [[[C64::new(0.0, 0.0); 2]; 2]; 2];
    for (j, dj) in d.iter_mut().enumerate() {
        let p = pauli(j);
        for r in 0..2 {
            for c in 0..2 {
                let id = if r == c { -sinc * v[j] } else { 0.0 };
                dj[r][c] = C64::new(id, 0.0) + mi * (c2 * v[j] * vs[r][c] + p[r][c] * sinc);
            }
        }
    }
    (u, d)
}

fn m2_mul(a: &M2, b: &M2) -> M2 {
    let mut o = [[C64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            o[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    o
}

fn m2_identity() -> M2 {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    [[one, z], [z, one]]
}

fn m2_trace(a: &M2) -> C64 {
    a[0][0] + a[1][1]
}

fn trace_overlap(target: &CMatrix, u: &CMatrix) -> C64 {
    (target.adjoint() * u).trace()
}

/// Gate fidelity `|Tr(U_t† U)|² / d²` of one member.
fn member_fidelity(problem: &GrapeProblem, member: &EnsembleMember, wf: &Waveform) -> f64 {
    let mut u = m2_identity();
    for k in 0..wf.len() {
        let v = rotation_vector(member, wf.real_hz[k], wf.imag_hz[k], wf.piece_duration);
        u = m2_mul(&su2_exp_with_derivatives(v).0, &u);
    }
    trace_overlap(&problem.target, &m2_to_matrix(&u)).norm_sqr() / 4.0
}

/// Ensemble-weighted gate fidelity.
pub fn fidelity(problem: &GrapeProblem, wf: &Waveform) -> Result<f64> {
    problem.check(wf)?;
    Ok(problem
        .ensemble
        .iter()
        .map(|m| m.weight * member_fidelity(problem, m, wf))
        .sum())
}

/// Per-piece gradient of the fidelity with respect to the real and
/// imaginary amplitudes (per Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.real
            .iter()
            .chain(&self.imag)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn member_gradient(
    problem: &GrapeProblem,
    member: &EnsembleMember,
    wf: &Waveform,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = wf.len();
    let dt = wf.piece_duration;
    // ∂v_x/∂re = ∂v_y/∂im = π s dt
    let dv = PI * member.amplitude_scale * dt;
    let mut steps = Vec::with_capacity(n);
    let mut derivs = Vec::with_capacity(n);
    for k in 0..n {
        let v = rotation_vector(member, wf.real_hz[k], wf.imag_hz[k], dt);
        let (u, d) = su2_exp_with_derivatives(v);
        steps.push(u);
        derivs.push(d);
    }
    // forward[k] = U_k ⋯ U_1 (forward[0] = 1)
    let mut forward = Vec::with_capacity(n + 1);
    forward.push(m2_identity());
    for k in 0..n {
        let next = m2_mul(&steps[k], &forward[k]);
        forward.push(next);
    }
    // backward[k] = U_t† U_n ⋯ U_{k+2}, so Tr(backward[k] dU_k forward[k]) = dg
    let t = problem.target.adjoint();
    let mut acc: M2 = [[t[(0, 0)], t[(0, 1)]], [t[(1, 0)], t[(1, 1)]]];
    let mut backward = vec![m2_identity(); n];
    for k in (0..n).rev() {
        backward[k] = acc;
        acc = m2_mul(&acc, &steps[k]);
    }
    let g = m2_trace(&acc);
    let mut gr = vec![0.0; n];
    let mut gi = vec![0.0; n];
    for k in 0..n {
        for (j, out) in [&mut gr, &mut gi].into_iter().enumerate() {
            let dg = m2_trace(&m2_mul(&m2_mul(&backward[k], &derivs[k][j]), &forward[k])) * dv;
            out[k] = member.weight * 2.0 * (g.conj() * dg).re / 4.0;
        }
    }
    (member.weight * g.norm_sqr() / 4.0, gr, gi)
}

/// Fidelity and its exact gradient.
pub fn fidelity_and_gradient(problem: &GrapeProblem, wf: &Waveform) -> Result<(f64, Gradient)> {
    problem.check(wf)?;
    let parts: Vec<(f64, Vec<f64>, Vec<f64>)> = problem
        .ensemble
        .iter()
        .map(|m| member_gradient(problem, m, wf))
        .collect();
    let n = wf.len();
    let mut f = 0.0;
    let mut grad = Gradient {
        real: vec![0.0; n],
        imag: vec![0.0; n],
    };
    for (fi, gr, gi) in parts {
        f += fi;
        for k in 0..n {
            grad.real[k] += gr[k];
            grad.imag[k] += gi[k];
        }
    }
    Ok((f, grad))
}

pub fn grape_gradient(problem: &GrapeProblem, wf: &Waveform) -> Result<Gradient> {
    fidelity_and_gradient(problem, wf).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    /// Stop once this fidelity is reached.
    pub target_fidelity: f64,
    /// Stop when the projected step falls below this (in units of max_rabi).
    pub step_tolerance: f64,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iterations: 20_000,
            target_fidelity: 1.0 - 1e-7,
            step_tolerance: 1e-12,
            armijo: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub waveform: Waveform,
    pub fidelity: f64,
    /// Fidelity after each accepted step (first entry is the start).
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Reached the target fidelity or a stationary point.
    pub converged: bool,
    /// Why the optimizer stopped.
    pub status: String,
}

/// Uniform random waveform in the disc of radius `0.5 max_rabi`.
pub fn random_waveform(problem: &GrapeProblem, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wf = Waveform::zeros(problem.n_pieces, problem.piece_duration);
    for k in 0..problem.n_pieces {
        let r = 0.5 * problem.max_rabi_hz * rng.random::<f64>().sqrt();
        let th = 2.0 * PI * rng.random::<f64>();
        wf.real_hz[k] = r * th.cos();
        wf.imag_hz[k] = r * th.sin();
    }
    wf
}

/// Projected gradient ascent with Armijo backtracking.
///
/// Starts from `seed_waveform` or, if `None`, from [`random_waveform`] with
/// `opts.seed`. Never fails on non-convergence; inspect `converged`.
pub fn optimize(
    problem: &GrapeProblem,
    seed_waveform: Option<Waveform>,
    opts: OptimizeOptions,
) -> Result<OptimizeResult> {
    problem.validate()?;
    let mut wf = seed_waveform.unwrap_or_else(|| random_waveform(problem, opts.seed));
    wf.piece_duration = problem.piece_duration;
    problem.check(&wf)?;
    wf.project(problem.max_rabi_hz);
    let scale = problem.max_rabi_hz;
    let (mut f, mut grad) = fidelity_and_gradient(problem, &wf)?;
    let mut trace = vec![f];
    // Step length in normalized units (amplitude / max_rabi, gradient × max_rabi).
    // The first trial length each iteration is the Barzilai–Borwein estimate;
    // Armijo backtracking keeps the trace monotone.
    let mut alpha = 1.0;
    let mut iterations = 0;
    let mut status = "max_iterations".to_string();
    let mut converged = false;
    while iterations < opts.max_iterations {
        if f >= opts.target_fidelity {
            status = "target_fidelity".into();
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        let mut last_step = 0.0;
        for _ in 0..60 {
            let mut trial = wf.clone();
            for k in 0..trial.len() {
                trial.real_hz[k] += alpha * scale * scale * grad.real[k];
                trial.imag_hz[k] += alpha * scale * scale * grad.imag[k];
            }
            trial.project(problem.max_rabi_hz);
            // Directional increase predicted along the projected step.
            let mut pred = 0.0;
            let mut step2 = 0.0;
            for k in 0..trial.len() {
                let dr = trial.real_hz[k] - wf.real_hz[k];
                let di = trial.imag_hz[k] - wf.imag_hz[k];
                pred += grad.real[k] * dr + grad.imag[k] * di;
                step2 += dr * dr + di * di;
            }
            last_step = step2.sqrt() / scale;
            if last_step < opts.step_tolerance {
                break;
            }
            let ft = fidelity(problem, &trial)?;
            if ft >= f + opts.armijo * pred {
                let (nf, ng) = fidelity_and_gradient(problem, &trial)?;
                let mut ss = 0.0;
                let mut sy = 0.0;
                for k in 0..trial.len() {
                    let sr = (trial.real_hz[k] - wf.real_hz[k]) / scale;
                    let si = (trial.imag_hz[k] - wf.imag_hz[k]) / scale;
                    ss += sr * sr + si * si;
                    sy += sr * (ng.real[k] - grad.real[k]) * scale
                        + si * (ng.imag[k] - grad.imag[k]) * scale;
                }
                alpha = if sy < 0.0 {
                    (ss / -sy).clamp(1e-6, 1e6)
                } else {
                    (alpha * 2.0).min(1e6)
                };
                wf = trial;
                f = nf;
                grad = ng;
                trace.push(f);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            status = if last_step < opts.step_tolerance {
                "stationary".into()
            } else {
                "line_search_failed".into()
            };
            converged = last_step < opts.step_tolerance;
            break;
        }
    }
    if f >= opts.target_fidelity {
        converged = true;
        status = "target_fidelity".into();
    }
    Ok(OptimizeResult {
        waveform: wf,
        fidelity: f,
        trace,
        iterations,
        converged,
        status,
    })
}

/// Serializable description of a gate-optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrapeSpec {
    pub gate: Gate,
    pub n_pieces: usize,
    pub piece_duration_s: f64,
    pub max_rabi_hz: f64,
    #[serde(default = "default_b0")]
    pub b0_tesla: f64,
    /// Electron level paired with m_s = 0 when verifying on the full system.
    #[serde(default = "default_target_ms")]
    pub target_ms: f64,
    /// Defaults to the `{0, ±A∥/2}` ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Vec<EnsembleMember>>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_target_fidelity")]
    pub target_fidelity: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_b0() -> f64 {
    crate::constants::SENSING_FIELD_T
}

fn default_target_ms() -> f64 {
    -1.0
}

fn default_max_iterations() -> usize {
    OptimizeOptions::default().max_iterations
}

fn default_target_fidelity() -> f64 {
    OptimizeOptions::default().target_fidelity
}

fn default_restarts() -> usize {
    4
}

impl GrapeSpec {
    /// π pulse of 10 × 25 ns at 10 MHz maximum Rabi frequency.
    pub fn pi() -> Self {
        Self::for_gate(Gate::Pi, 10)
    }

    /// π/2 pulse of 14 × 25 ns at 10 MHz maximum Rabi frequency.
    pub fn half_pi() -> Self {
        Self::for_gate(Gate::HalfPi, 14)
    }

    fn for_gate(gate: Gate, n_pieces: usize) -> Self {
        GrapeSpec {
            gate,
            n_pieces,
            piece_duration_s: 25e-9,
            max_rabi_hz: 10e6,
            b0_tesla: default_b0(),
            target_ms: default_target_ms(),
            ensemble: None,
            max_iterations: default_max_iterations(),
            target_fidelity: default_target_fidelity(),
            restarts: default_restarts(),
        }
    }

    pub fn system(&self) -> SpinSystem {
        SpinSystem::default().with_b0(self.b0_tesla)
    }

    pub fn problem(&self) -> Result<GrapeProblem> {
        let sys = self.system();
        let ensemble = self
            .ensemble
            .clone()
            .unwrap_or_else(|| default_ensemble(&sys));
        GrapeProblem::new(
            sys,
            self.gate.unitary(),
            self.n_pieces,
            self.piece_duration_s,
            self.max_rabi_hz,
            ensemble,
        )
    }

    pub fn options(&self, seed: u64) -> OptimizeOptions {
        OptimizeOptions {
            max_iterations: self.max_iterations,
            target_fidelity: self.target_fidelity,
            seed,
            ..OptimizeOptions::default()
        }
    }
}

/// Runs [`optimize`] from `starts` random waveforms (seeds `opts.seed + i`)
/// and keeps the best; stops early once a run reaches the target.
pub fn optimize_multistart(
    problem: &GrapeProblem,
    starts: usize,
    opts: OptimizeOptions,
) -> Result<OptimizeResult> {
    let mut best: Option<OptimizeResult> = None;
    for i in 0..starts.max(1) {
        let run_opts = OptimizeOptions {
            seed: opts.seed.wrapping_add(i as u64),
            ..opts
        };
        let r = optimize(problem, None, run_opts)?;
        let done = r.fidelity >= opts.target_fidelity;
        if best.as_ref().is_none_or(|b| r.fidelity > b.fidelity) {
            best = Some(r);
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least one start"))
}

/// Fidelity of `wf` on the real spin system, per ¹⁵N subspace, computed by
/// building MW drives and propagating with [`crate::spin`].
///
/// The carrier sits midway between the `m_s = 0 ↔ target_ms` transitions of
/// the nuclear projections; the result is the mean subspace fidelity.
pub fn verify_on_system(
    sys: &SpinSystem,
    target: &CMatrix,
    wf: &Waveform,
    target_ms: f64,
) -> Result<(f64, Vec<f64>)> {
    let m_is: Vec<f64> = sys.i_nuclear.projections().collect();
    let pairs: Vec<LevelPair> = m_is
        .iter()
        .map(|&mi| LevelPair::electron(sys, target_ms, mi))
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = pairs
        .iter()
        .map(|p| sys.transition_frequency(p.a, p.b).map(f64::abs))
        .collect::<Result<_>>()?;
    let carrier_hz = gaps.iter().sum::<f64>() / gaps.len() as f64 / (2.0 * PI);
    let (amp, phase) = wf.polar();
    let drive = DriveTerm::new(Channel::Mw, carrier_hz, amp, phase, wf.piece_duration)?;
    let per: Vec<f64> = pairs
        .iter()
        .map(|&pair| {
            let (_, pieces) = build_rotating_frame_hamiltonian(
                sys,
                std::slice::from_ref(&drive),
                pair,
                RwaOptions::default(),
            )?;
            let u = propagator(&pieces)?;
            Ok(trace_overlap(target, &u).norm_sqr() / 4.0)
        })
        .collect::<Result<_>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Finite-difference gradient (central, step `h` in Hz) for checking.
pub fn finite_difference_gradient(
    problem: &GrapeProblem,
    wf: &Waveform,
    h: f64,
) -> Result<Gradient> {
    let n = wf.len();
    let mut g = Gradient {
        real: vec![0.0; n],
        imag: vec![0.0; n],
    };
    for k in 0..n {
        for part in 0..2 {
            let mut up = wf.clone();
            let mut dn = wf.clone();
            if part == 0 {
                up.real_hz[k] += h;
                dn.real_hz[k] -= h;
            } else {
                up.imag_hz[k] += h;
                dn.imag_hz[k] -= h;
            }
            let d = (fidelity(problem, &up)? - fidelity(problem, &dn)?) / (2.0 * h);
            if part == 0 {
                g.real[k] = d;
            } else {
                g.imag[k] = d;
            }
        }
    }
    Ok(g)
}

/// Matrix view used in tests and by the FFI layer.
pub fn member_unitary(member: &EnsembleMember, wf: &Waveform) -> DMatrix<C64> {
    let mut u = CMatrix::identity(2, 2);
    for k in 0..wf.len() {
        u = step(
            &piece_hamiltonian(member, wf.real_hz[k], wf.imag_hz[k]),
            wf.piece_duration,
        ) * u;
    }
    u
}
