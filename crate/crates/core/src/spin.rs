//! NV electron spin coupled to the adjacent nitrogen nuclear spin.
//!
//! Matrices live in the product basis `|m_s⟩ ⊗ |m_I⟩` with both quantum
//! numbers ordered from `+j` down to `-j`, so basis index
//! `k = i_s * (2I + 1) + i_n`. All Hamiltonians are in angular-frequency
//! units (rad/s) with ħ = 1.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{
    hz_to_rad, GAMMA_E, GAMMA_N15_HZ_PER_T, HYPERFINE_PARALLEL_HZ, SENSING_FIELD_T,
    ZERO_FIELD_SPLITTING_HZ,
};
use crate::error::{ensure_finite, ensure_positive, Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

const HERMITIAN_TOL: f64 = 1e-12;

/// A spin quantum number, stored as `2j` so half-integers are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SpinNumber(u32);

impl SpinNumber {
    pub const HALF: SpinNumber = SpinNumber(1);
    pub const ONE: SpinNumber = SpinNumber(2);

    pub fn from_twice(twice: u32) -> Self {
        SpinNumber(twice)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn multiplicity(self) -> usize {
        self.0 as usize + 1
    }

    /// Magnetic quantum numbers from `+j` to `-j`.
    pub fn projections(self) -> impl Iterator<Item = f64> {
        let j = self.value();
        (0..self.multiplicity()).map(move |k| j - k as f64)
    }
}

impl TryFrom<f64> for SpinNumber {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        let twice = 2.0 * v;
        if v >= 0.0 && (twice - twice.round()).abs() < 1e-9 {
            Ok(SpinNumber(twice.round() as u32))
        } else {
            Err(Error::parameter(
                "spin",
                format!("{v} is not a non-negative (half-)integer"),
            ))
        }
    }
}

impl From<SpinNumber> for f64 {
    fn from(s: SpinNumber) -> f64 {
        s.value()
    }
}

/// Cartesian spin operators for a single spin `j`.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub x: CMatrix,
    pub y: CMatrix,
    pub z: CMatrix,
}

impl SpinOperators {
    pub fn new(j: SpinNumber) -> Self {
        let n = j.multiplicity();
        let jv = j.value();
        let m: Vec<f64> = j.projections().collect();
        let mut plus = CMatrix::zeros(n, n);
        // J+ |m⟩ = sqrt(j(j+1) - m(m+1)) |m+1⟩; index k-1 holds m+1.
        for k in 1..n {
            let mk = m[k];
            plus[(k - 1, k)] = C64::new((jv * (jv + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
        }
        let minus = plus.adjoint();
        let x = (&plus + &minus) * C64::new(0.5, 0.0);
        let y = (&plus - &minus) * C64::new(0.0, -0.5);
        let z = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            m.iter().map(|&v| C64::new(v, 0.0)),
        ));
        SpinOperators { x, y, z }
    }
}

pub(crate) fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// A Hermitian matrix in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian(CMatrix);

impl Hamiltonian {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape {
                expected: "square matrix".into(),
                found: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let defect = (&m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::Domain(format!(
                "matrix is not Hermitian (max defect {defect:.3e})"
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        Ok(Hamiltonian(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Hamiltonian(CMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// `exp(-i H dt)`.
    pub fn step(&self, dt: f64) -> CMatrix {
        (&self.0 * C64::new(0.0, -dt)).exp()
    }
}

/// One constant segment of a piecewise-constant evolution.
#[derive(Debug, Clone)]
pub struct Piece {
    pub hamiltonian: Hamiltonian,
    pub duration: f64,
}

/// The NV electron spin plus the adjacent nitrogen nuclear spin.
///
/// Frequencies are held in rad/s; the `*_hz` constructors convert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub s_electron: SpinNumber,
    pub i_nuclear: SpinNumber,
    /// rad s⁻¹ T⁻¹
    pub gamma_e: f64,
    /// rad s⁻¹ T⁻¹
    pub gamma_n: f64,
    /// rad/s
    pub d_zfs: f64,
    /// rad/s
    pub a_parallel: f64,
    /// T
    pub b0: f64,
}

impl Default for SpinSystem {
    /// NV⁻ with ¹⁵N (I = 1/2) at the 7662 G sensing field.
    fn default() -> Self {
        SpinSystem {
            s_electron: SpinNumber::ONE,
            i_nuclear: SpinNumber::HALF,
            gamma_e: GAMMA_E,
            gamma_n: hz_to_rad(GAMMA_N15_HZ_PER_T),
            d_zfs: hz_to_rad(ZERO_FIELD_SPLITTING_HZ),
            a_parallel: hz_to_rad(HYPERFINE_PARALLEL_HZ),
            b0: SENSING_FIELD_T,
        }
    }
}

impl SpinSystem {
    pub fn with_b0(mut self, tesla: f64) -> Self {
        self.b0 = tesla;
        self
    }

    pub fn with_zero_field_splitting_hz(mut self, hz: f64) -> Self {
        self.d_zfs = hz_to_rad(hz);
        self
    }

    pub fn with_hyperfine_hz(mut self, hz: f64) -> Self {
        self.a_parallel = hz_to_rad(hz);
        self
    }

    pub fn with_nuclear_spin(mut self, i: SpinNumber, gamma_n_hz_per_t: f64) -> Self {
        self.i_nuclear = i;
        self.gamma_n = hz_to_rad(gamma_n_hz_per_t);
        self
    }

    pub fn with_gamma_e_hz_per_t(mut self, hz_per_t: f64) -> Self {
        self.gamma_e = hz_to_rad(hz_per_t);
        self
    }

    pub fn dim(&self) -> usize {
        self.s_electron.multiplicity() * self.i_nuclear.multiplicity()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("gamma_e", self.gamma_e)?;
        ensure_finite("gamma_n", self.gamma_n)?;
        ensure_finite("d_zfs", self.d_zfs)?;
        ensure_finite("a_parallel", self.a_parallel)?;
        ensure_finite("b0", self.b0)?;
        if self.b0 < 0.0 {
            return Err(Error::parameter("b0", "must be non-negative"));
        }
        if self.s_electron.multiplicity() < 2 {
            return Err(Error::parameter("s_electron", "must be at least 1/2"));
        }
        Ok(())
    }

    /// Basis index of `|m_s, m_I⟩`.
    pub fn basis_index(&self, m_s: f64, m_i: f64) -> Option<usize> {
        let is = self
            .s_electron
            .projections()
            .position(|m| (m - m_s).abs() < 1e-9)?;
        let ii = self
            .i_nuclear
            .projections()
            .position(|m| (m - m_i).abs() < 1e-9)?;
        Some(is * self.i_nuclear.multiplicity() + ii)
    }

    /// `(m_s, m_I)` for a basis index.
    pub fn quantum_numbers(&self, index: usize) -> Option<(f64, f64)> {
        let ni = self.i_nuclear.multiplicity();
        if index >= self.dim() {
            return None;
        }
        let ms = self.s_electron.projections().nth(index / ni)?;
        let mi = self.i_nuclear.projections().nth(index % ni)?;
        Some((ms, mi))
    }

    /// Electron operators embedded in the product space.
    pub fn electron_operators(&self) -> SpinOperators {
        let s = SpinOperators::new(self.s_electron);
        let id = CMatrix::identity(self.i_nuclear.multiplicity(), self.i_nuclear.multiplicity());
        SpinOperators {
            x: kron(&s.x, &id),
            y: kron(&s.y, &id),
            z: kron(&s.z, &id),
        }
    }

    /// Nuclear operators embedded in the product space.
    pub fn nuclear_operators(&self) -> SpinOperators {
        let i = SpinOperators::new(self.i_nuclear);
        let id = CMatrix::identity(
            self.s_electron.multiplicity(),
            self.s_electron.multiplicity(),
        );
        SpinOperators {
            x: kron(&id, &i.x),
            y: kron(&id, &i.y),
            z: kron(&id, &i.z),
        }
    }

    /// Energy of each basis state (rad/s); the static Hamiltonian is diagonal.
    pub fn level_energies(&self) -> Result<Vec<f64>> {
        let h = build_static_hamiltonian(self)?;
        Ok((0..self.dim()).map(|k| h.matrix()[(k, k)].re).collect())
    }

    /// Energy difference `E_b - E_a` (rad/s).
    pub fn transition_frequency(&self, a: usize, b: usize) -> Result<f64> {
        let e = self.level_energies()?;
        let (ea, eb) = (
            e.get(a).ok_or_else(|| index_error(a, e.len()))?,
            e.get(b).ok_or_else(|| index_error(b, e.len()))?,
        );
        Ok(eb - ea)
    }
}

fn index_error(i: usize, dim: usize) -> Error {
    Error::Shape {
        expected: format!("level index < {dim}"),
        found: i.to_string(),
    }
}

/// `D S_z² + γ_e B₀ S_z + γ_N B₀ I_z + A∥ S_z I_z`.
pub fn build_static_hamiltonian(sys: &SpinSystem) -> Result<Hamiltonian> {
    sys.validate()?;
    let s = sys.electron_operators();
    let i = sys.nuclear_operators();
    let c = |v: f64| C64::new(v, 0.0);
    let h = &s.z * &s.z * c(sys.d_zfs)
        + &s.z * c(sys.gamma_e * sys.b0)
        + &i.z * c(sys.gamma_n * sys.b0)
        + &s.z * &i.z * c(sys.a_parallel);
    Hamiltonian::new(h)
}

/// Which spin a drive couples to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// Microwave, coupling through `S_x`.
    Mw,
    /// Radio frequency, coupling through `I_x`.
    Rf,
}

/// A piecewise-constant drive `Ω(t) cos(ω t + φ(t))` on one channel.
///
/// `rabi_hz[k]` is the nutation frequency the piece produces on the
/// addressed transition, so a resonant piece of length `1 / (2 Ω)` is a π
/// rotation regardless of the transition's matrix element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveTerm {
    pub channel: Channel,
    pub rabi_hz: Vec<f64>,
    pub phase_rad: Vec<f64>,
    /// rad/s
    pub carrier: f64,
    pub piece_duration: f64,
}

impl DriveTerm {
    pub fn new(
        channel: Channel,
        carrier_hz: f64,
        rabi_hz: Vec<f64>,
        phase_rad: Vec<f64>,
        piece_duration: f64,
    ) -> Result<Self> {
        let d = DriveTerm {
            channel,
            rabi_hz,
            phase_rad,
            carrier: hz_to_rad(carrier_hz),
            piece_duration,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn constant(
        channel: Channel,
        carrier_hz: f64,
        rabi_hz: f64,
        phase_rad: f64,
        duration: f64,
    ) -> Result<Self> {
        Self::new(
            channel,
            carrier_hz,
            vec![rabi_hz],
            vec![phase_rad],
            duration,
        )
    }

    pub fn n_pieces(&self) -> usize {
        self.rabi_hz.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("piece_duration", self.piece_duration)?;
        ensure_finite("carrier", self.carrier)?;
        if self.rabi_hz.len() != self.phase_rad.len() {
            return Err(Error::Shape {
                expected: format!("{} phases", self.rabi_hz.len()),
                found: self.phase_rad.len().to_string(),
            });
        }
        if self.rabi_hz.is_empty() {
            return Err(Error::parameter("rabi_hz", "drive has no pieces"));
        }
        for (&a, &p) in self.rabi_hz.iter().zip(&self.phase_rad) {
            ensure_finite("rabi_hz", a)?;
            ensure_finite("phase_rad", p)?;
        }
        Ok(())
    }
}

/// Two basis levels addressed by a drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelPair {
    pub a: usize,
    pub b: usize,
}

impl LevelPair {
    pub fn new(a: usize, b: usize) -> Self {
        LevelPair { a, b }
    }

    /// Electron transition `m_s = 0 ↔ m_s = target` at fixed nuclear projection.
    pub fn electron(sys: &SpinSystem, target_ms: f64, m_i: f64) -> Result<Self> {
        let a = sys
            .basis_index(0.0, m_i)
            .ok_or_else(|| Error::Config(format!("no level m_s=0, m_I={m_i}")))?;
        let b = sys
            .basis_index(target_ms, m_i)
            .ok_or_else(|| Error::Config(format!("no level m_s={target_ms}, m_I={m_i}")))?;
        Ok(LevelPair { a, b })
    }
}

/// Options for the rotating-wave reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwaOptions {
    /// Largest accepted |carrier − transition| as a fraction of the carrier.
    pub detuning_window: f64,
}

impl Default for RwaOptions {
    fn default() -> Self {
        RwaOptions {
            detuning_window: 0.01,
        }
    }
}

/// A two-level subspace in the frame rotating with the drive carrier.
///
/// Basis order is (upper, lower) by energy; `detuning = ω_transition − ω_carrier`.
#[derive(Debug, Clone)]
pub struct RotatingFrame {
    pub upper: usize,
    pub lower: usize,
    /// rad/s
    pub detuning: f64,
    /// rad/s
    pub carrier: f64,
}

/// Effective two-level Hamiltonian `π(Re u σ_x + Im u σ_y) + (δ/2) σ_z`
/// for complex Rabi amplitude `u = Ω e^{iφ}` in Hz and detuning δ in rad/s.
pub fn two_level_hamiltonian(detuning: f64, rabi_re_hz: f64, rabi_im_hz: f64) -> CMatrix {
    let pi = std::f64::consts::PI;
    let h_off = C64::new(pi * rabi_re_hz, -pi * rabi_im_hz);
    CMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(0.5 * detuning, 0.0),
            h_off,
            h_off.conj(),
            C64::new(-0.5 * detuning, 0.0),
        ],
    )
}

/// Reduce lab-frame drives on one transition to rotating-frame pieces.
///
/// All drives must share the piece grid and carrier. Counter-rotating terms
/// are dropped.
pub fn build_rotating_frame_hamiltonian(
    sys: &SpinSystem,
    drives: &[DriveTerm],
    pair: LevelPair,
    opts: RwaOptions,
) -> Result<(RotatingFrame, Vec<Piece>)> {
    sys.validate()?;
    let first = drives
        .first()
        .ok_or_else(|| Error::Config("at least one drive is required".into()))?;
    for d in drives {
        d.validate()?;
        if d.n_pieces() != first.n_pieces()
            || (d.piece_duration - first.piece_duration).abs() > 1e-15 * first.piece_duration
        {
            return Err(Error::Config(
                "drives must share the same piece grid".into(),
            ));
        }
        if (d.carrier - first.carrier).abs() > 1e-12 * first.carrier.abs() {
            return Err(Error::Config(
                "drives on one subspace must share a carrier".into(),
            ));
        }
    }
    let dim = sys.dim();
    if pair.a >= dim || pair.b >= dim || pair.a == pair.b {
        return Err(Error::Config(format!(
            "invalid level pair ({}, {}) for dimension {dim}",
            pair.a, pair.b
        )));
    }
    let energies = sys.level_energies()?;
    let (upper, lower) = if energies[pair.a] >= energies[pair.b] {
        (pair.a, pair.b)
    } else {
        (pair.b, pair.a)
    };
    let gap = energies[upper] - energies[lower];
    let carrier = first.carrier;
    if carrier <= 0.0 || (gap - carrier).abs() > opts.detuning_window * carrier {
        return Err(Error::Config(format!(
            "drive at {:.6e} Hz is not resonant with transition {}↔{} at {:.6e} Hz",
            carrier / std::f64::consts::TAU,
            lower,
            upper,
            gap / std::f64::consts::TAU
        )));
    }
    let electron = sys.electron_operators();
    let nuclear = sys.nuclear_operators();
    for d in drives {
        let op = match d.channel {
            Channel::Mw => &electron.x,
            Channel::Rf => &nuclear.x,
        };
        if op[(upper, lower)].norm() < 1e-12 {
            return Err(Error::Config(format!(
                "{:?} drive does not couple levels {lower} and {upper}",
                d.channel
            )));
        }
    }
    let detuning = gap - carrier;
    let pieces = (0..first.n_pieces())
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for d in drives {
                let (s, c) = d.phase_rad[k].sin_cos();
                re += d.rabi_hz[k] * c;
                im += d.rabi_hz[k] * s;
            }
            Ok(Piece {
                hamiltonian: Hamiltonian::new(two_level_hamiltonian(detuning, re, im))?,
                duration: first.piece_duration,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        RotatingFrame {
            upper,
            lower,
            detuning,
            carrier,
        },
        pieces,
    ))
}

/// Apply the piecewise evolution to `initial` (a state column or a unitary).
pub fn propagate(pieces: &[Piece], initial: &CMatrix) -> Result<CMatrix> {
    let mut out = initial.clone();
    for p in pieces {
        if p.hamiltonian.dim() != out.nrows() {
            return Err(Error::Shape {
                expected: format!("{} rows", p.hamiltonian.dim()),
                found: out.nrows().to_string(),
            });
        }
        if !(p.duration >= 0.0) {
            return Err(Error::parameter("duration", "must be non-negative"));
        }
        out = p.hamiltonian.step(p.duration) * out;
    }
    Ok(out)
}

/// Total propagator of a piece list.
pub fn propagator(pieces: &[Piece]) -> Result<CMatrix> {
    let dim = pieces
        .first()
        .map(|p| p.hamiltonian.dim())
        .ok_or_else(|| Error::Config("empty piece list".into()))?;
    propagate(pieces, &CMatrix::identity(dim, dim))
}

/// `max |U†U − 1|`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let n = u.nrows();
    (u.adjoint() * u - CMatrix::identity(n, n))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
