//! Readout of the locked four-level pair: phase accumulation, conversion to
//! superradiant states, ground-level mixing, post-selection and the field
//! emitted once a coupling laser opens a Raman path `E1 -> G1 -> E2`.
//!
//! The emission runs in a frame rotating with the laser on `E2`, with the
//! cavity on `E1` and on the emission mode, so the Hamiltonian is time
//! independent. The quadrature is reported against a local oscillator at
//! the laser frequency; the emitted field then beats at `omega_clock`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::hilbert::{
    build_basis, HilbertError, OperatorMatrix, OperatorSum, ProductBasis, Spectrum, StateVector,
    Subsystem,
};
use crate::zeno_multilevel::{four, FourLevelEnergies, REFERENCE_LEVELS};

const ATOM_A: usize = 0;
const ATOM_B: usize = 1;
const MODE: usize = 2;

/// Top Fock level population that marks the emission mode as truncated.
pub const OVERFLOW_TOL: f64 = 1e-3;

/// A trace whose largest magnitude is below this cannot be fitted.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("post-selection has zero probability")]
    EmptyPostselection,
    #[error("emission mode truncated: top Fock population {population}")]
    CutoffOverflow { population: f64 },
    #[error("trace is numerically zero; phase undefined")]
    DegenerateFit,
}

pub type Result<T> = std::result::Result<T, ReadoutError>;

/// How the emitted field is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmissionModel {
    /// First order in the effective Raman coupling.
    Perturbative,
    /// Exact evolution of atoms, emission mode and classical laser.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutConfig {
    pub atom_a: FourLevelEnergies,
    pub atom_b: FourLevelEnergies,
    pub elapsed_time: f64,
    /// Laser detuning below the `G1 <-> E2` transition.
    pub laser_detuning: f64,
    pub laser_amplitude: f64,
    pub coupling: f64,
    pub emission_cutoff: usize,
    pub readout_times: Vec<f64>,
    /// Fit window length in periods of the beat frequency.
    pub fit_periods: f64,
    pub model: EmissionModel,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            atom_a: REFERENCE_LEVELS,
            atom_b: REFERENCE_LEVELS,
            elapsed_time: 0.0,
            laser_detuning: 10.0,
            laser_amplitude: 1.0,
            coupling: 2.0,
            emission_cutoff: 2,
            readout_times: (0..=400).map(|i| i as f64 * 0.005).collect(),
            fit_periods: 2.0,
            model: EmissionModel::Perturbative,
        }
    }
}

impl ReadoutConfig {
    pub fn averaged_levels(&self) -> FourLevelEnergies {
        self.atom_a.average(&self.atom_b)
    }

    /// `E1 + G1 - E2 - G2` of the atom-averaged levels.
    pub fn clock_frequency(&self) -> f64 {
        let l = self.averaged_levels();
        l.e1 + l.g1 - l.e2 - l.g2
    }

    /// Elapsed time giving `omega_clock t_f = phase`.
    pub fn with_clock_phase(mut self, phase: f64) -> Self {
        self.elapsed_time = phase / self.clock_frequency();
        self
    }

    /// Raman coupling `Omega A / (4 sqrt(Delta'^2 + 2 Omega^2))`: first
    /// order in the laser, with the pair's collective cavity dressing of
    /// the `E1` state kept exactly. Reduces to `Omega A / (4 Delta')`.
    pub fn effective_coupling(&self) -> f64 {
        let d = self.laser_detuning;
        let dressed = (d * d + 2.0 * self.coupling * self.coupling)
            .sqrt()
            .copysign(d);
        self.coupling * self.laser_amplitude / (4.0 * dressed)
    }

    /// Laser frequency `E2 - G1 - Delta'` (lab frame).
    pub fn laser_frequency(&self) -> f64 {
        let l = self.averaged_levels();
        l.e2 - l.g1 - self.laser_detuning
    }

    /// Emission-mode frequency that makes `|E1, 0> <-> |E2, 1>` resonant.
    pub fn cavity_frequency(&self) -> f64 {
        let l = self.averaged_levels();
        l.e1 - self.laser_detuning
    }

    /// Frequency of the quadrature against a laser-referenced oscillator.
    pub fn beat_frequency(&self) -> f64 {
        self.cavity_frequency() - self.laser_frequency()
    }

    pub fn fit_window(&self) -> f64 {
        self.fit_periods * 2.0 * PI / self.beat_frequency().abs()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ReadoutError::InvalidConfig(msg.to_string()));
        if self.laser_detuning == 0.0 || !self.laser_detuning.is_finite() {
            return bad("laser detuning must be nonzero");
        }
        if self.clock_frequency() == 0.0 {
            return bad("clock frequency vanishes");
        }
        if self.emission_cutoff < 1 {
            return bad("emission cutoff must be at least 1");
        }
        if self.readout_times.is_empty()
            || self.readout_times.windows(2).any(|w| w[1] <= w[0])
            || self.readout_times[0] < 0.0
        {
            return bad("readout times must be non-negative and increasing");
        }
        if self.fit_periods <= 0.0 {
            return bad("fit window must be positive");
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<Arc<ProductBasis>> {
        Ok(build_basis(&[
            Subsystem::atom(4),
            Subsystem::atom(4),
            Subsystem::mode(self.emission_cutoff),
        ])?)
    }
}

fn pair(basis: &Arc<ProductBasis>, terms: &[(C64, [usize; 2])]) -> Result<StateVector> {
    let mut amps = DVector::zeros(basis.dimension());
    for &(c, [a, b]) in terms {
        amps[basis.index_of(&[a, b, 0])?] += c;
    }
    Ok(StateVector::from_amplitudes(basis, amps)?)
}

/// Locked four-level state with the emission mode empty.
pub fn locked_state(basis: &Arc<ProductBasis>) -> Result<StateVector> {
    use four::*;
    let h = C64::new(0.5, 0.0);
    pair(
        basis,
        &[(h, [E1, G1]), (-h, [G1, E1]), (h, [E2, G2]), (-h, [G2, E2])],
    )
}

/// Free evolution for `t_f` under the atom-averaged levels, with the global
/// phase chosen so that the `|E1 G1>` amplitude is real and positive.
pub fn accumulate_clock_phase(
    state: &StateVector,
    elapsed_time: f64,
    config: &ReadoutConfig,
) -> Result<StateVector> {
    let levels = config.averaged_levels();
    let basis = state.basis();
    let mut amps = state.amplitudes().clone();
    for (i, z) in amps.iter_mut().enumerate() {
        let d = basis.multi_index(i);
        let energy = levels.level(d[ATOM_A]) + levels.level(d[ATOM_B]);
        *z *= C64::from_polar(1.0, -energy * elapsed_time);
    }
    let reference = amps[basis.index_of(&[four::E1, four::G1, 0])?];
    if reference.norm() > 0.0 {
        let unit = reference / reference.norm();
        amps.iter_mut().for_each(|z| *z *= unit.conj());
    }
    Ok(StateVector::from_amplitudes(basis, amps)?)
}

fn atom_gate(
    basis: &Arc<ProductBasis>,
    atom: usize,
    local: &DMatrix<C64>,
) -> Result<OperatorMatrix> {
    Ok(OperatorMatrix::product(basis, &[(atom, local)])?)
}

/// Sign flip of `level` on atom B only.
pub fn flip_sign_atom_b(state: &StateVector, level: usize) -> Result<StateVector> {
    if level >= 4 {
        return Err(HilbertError::LevelOutOfRange {
            index: ATOM_B,
            level,
            dim: 4,
        }
        .into());
    }
    let mut local = DMatrix::identity(4, 4);
    local[(level, level)] = C64::new(-1.0, 0.0);
    Ok(state.apply(&atom_gate(state.basis(), ATOM_B, &local)?)?)
}

/// Local mixing gate `G1 -> (G1 + G2)/sqrt2`, `G2 -> (G2 - G1)/sqrt2`.
pub fn ground_mixing_gate() -> DMatrix<C64> {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut m = DMatrix::identity(4, 4);
    m[(four::G1, four::G1)] = s;
    m[(four::G2, four::G1)] = s;
    m[(four::G1, four::G2)] = -s;
    m[(four::G2, four::G2)] = s;
    m
}

/// Applies the ground-level mixing to both atoms.
pub fn mix_ground_levels(state: &StateVector) -> Result<StateVector> {
    let basis = state.basis();
    let gate = ground_mixing_gate();
    let op = OperatorMatrix::product(basis, &[(ATOM_A, &gate), (ATOM_B, &gate)])?;
    Ok(state.apply(&op)?)
}

/// Discards every component with either atom in `G2`.
pub fn postselect_not_g2(state: &StateVector) -> Result<(StateVector, f64)> {
    let p = state.project_where(|d| d[ATOM_A] != four::G2 && d[ATOM_B] != four::G2);
    match p.state {
        Some(s) => Ok((s, p.probability)),
        None => Err(ReadoutError::EmptyPostselection),
    }
}

/// The emitter state: locked state, phase accumulation over `t_f`, sign
/// flips on atom B, ground mixing and post-selection. Returns the state and
/// the post-selection probability.
pub fn prepare_emitter(config: &ReadoutConfig) -> Result<(StateVector, f64)> {
    let basis = config.basis()?;
    let mut s = accumulate_clock_phase(&locked_state(&basis)?, config.elapsed_time, config)?;
    s = flip_sign_atom_b(&s, four::E1)?;
    s = flip_sign_atom_b(&s, four::E2)?;
    s = mix_ground_levels(&s)?;
    postselect_not_g2(&s)
}

/// Hamiltonian in the rotating frame: `E1` at `E1 - omega_c`, `E2` at
/// `Delta'`, the mode at zero, cavity coupling `Omega/2` on `E1 <-> G1`
/// and laser coupling `A/2` on `E2 <-> G1`.
pub fn emission_hamiltonian(config: &ReadoutConfig) -> Result<OperatorMatrix> {
    let basis = config.basis()?;
    let l = config.averaged_levels();
    let frame = |level: usize| match level {
        four::G1 => 0.0,
        four::G2 => l.g2 - l.g1,
        four::E1 => l.e1 - l.g1 - config.cavity_frequency(),
        _ => l.e2 - l.g1 - config.laser_frequency(),
    };
    let mut h = OperatorSum::new(&basis);
    h.add_diagonal(|d| frame(d[ATOM_A]) + frame(d[ATOM_B]));
    let mut laser = DMatrix::zeros(4, 4);
    laser[(four::E2, four::G1)] = C64::new(1.0, 0.0);
    for atom in [ATOM_A, ATOM_B] {
        h.add_exchange(0.5 * config.coupling, atom, four::E1, four::G1, MODE)?;
        h.add_product_with_adjoint(0.5 * config.laser_amplitude, &[(atom, &laser)])?;
    }
    Ok(h.build()?)
}

/// Emitted quadrature and its fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldTrace {
    pub times: Vec<f64>,
    pub quadrature: Vec<f64>,
    /// In `(-pi, pi]`, from a fit at the beat frequency.
    pub fitted_phase: f64,
    /// From zero crossings; `NaN` with fewer than two crossings.
    pub fitted_frequency: f64,
    pub max_top_population: f64,
}

fn lowering_overlap(state: &StateVector, cutoff: usize) -> Result<C64> {
    // <psi| a |psi> without building the operator
    let basis = state.basis();
    let stride = basis.dimension() / basis.subsystem(MODE)?.dim();
    let amps = state.amplitudes();
    let mut acc = C64::new(0.0, 0.0);
    for rest in 0..stride {
        for k in 1..=cutoff {
            let hi = amps[rest * (cutoff + 1) + k];
            let lo = amps[rest * (cutoff + 1) + k - 1];
            acc += lo.conj() * hi * (k as f64).sqrt();
        }
    }
    Ok(acc)
}

/// Quadrature on the readout grid and the largest top-Fock population
/// reached (zero for the perturbative model), without fitting.
pub fn field_quadrature(state: &StateVector, config: &ReadoutConfig) -> Result<(Vec<f64>, f64)> {
    config.validate()?;
    if state.mode_population(MODE, 0)? < state.norm_squared() * (1.0 - 1e-12) {
        return Err(HilbertError::Entangled {
            mode: MODE,
            purity: f64::NAN,
        }
        .into());
    }
    let (quadrature, max_top) = match config.model {
        EmissionModel::Perturbative => (perturbative_trace(state, config)?, 0.0),
        EmissionModel::Full => full_trace(state, config, config.beat_frequency())?,
    };
    if max_top > OVERFLOW_TOL {
        return Err(ReadoutError::CutoffOverflow {
            population: max_top,
        });
    }
    Ok((quadrature, max_top))
}

/// `<a + a^dag>` on the readout grid for an emitter with an empty mode,
/// with its phase and frequency fits.
pub fn emit_field_trace(state: &StateVector, config: &ReadoutConfig) -> Result<FieldTrace> {
    let (quadrature, max_top) = field_quadrature(state, config)?;
    let times = config.readout_times.clone();
    let fitted_phase = extract_phase(
        &times,
        &quadrature,
        config.beat_frequency(),
        config.fit_window(),
    )?;
    let fitted_frequency = zero_crossing_frequency(&times, &quadrature);
    Ok(FieldTrace {
        times,
        quadrature,
        fitted_phase,
        fitted_frequency,
        max_top_population: max_top,
    })
}

fn perturbative_trace(state: &StateVector, config: &ReadoutConfig) -> Result<Vec<f64>> {
    // <a>(t) = -i t g <psi| a V |psi>, with V = sum over atoms of
    // |E2><E1| a^dag + h.c.; only the E1 -> E2 transfer survives
    let basis = state.basis();
    let g = config.effective_coupling();
    let mut transfer = C64::new(0.0, 0.0);
    for atom in [ATOM_A, ATOM_B] {
        for (i, amp) in state.amplitudes().iter().enumerate() {
            let mut d = basis.multi_index(i);
            if d[atom] != four::E1 || d[MODE] != 0 {
                continue;
            }
            d[atom] = four::E2;
            transfer += state.amplitudes()[basis.index_of(&d)?].conj() * amp;
        }
    }
    let norm = state.norm_squared();
    let beat = config.beat_frequency();
    Ok(config
        .readout_times
        .iter()
        .map(|&t| {
            let a = C64::new(0.0, -t * g) * transfer / norm;
            2.0 * (C64::from_polar(1.0, -beat * t) * a).re
        })
        .collect())
}

fn full_trace(state: &StateVector, config: &ReadoutConfig, beat: f64) -> Result<(Vec<f64>, f64)> {
    let h = emission_hamiltonian(config)?;
    let spectrum = Spectrum::dense(&h)?;
    let cutoff = config.emission_cutoff;
    let norm = state.norm_squared();
    let mut out = Vec::with_capacity(config.readout_times.len());
    let mut top: f64 = 0.0;
    for &t in &config.readout_times {
        let s = spectrum.evolve(state, t)?;
        top = top.max(s.mode_population(MODE, cutoff)? / norm);
        let a = lowering_overlap(&s, cutoff)? / norm;
        out.push(2.0 * (C64::from_polar(1.0, -beat * t) * a).re);
    }
    Ok((out, top))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Least-squares quadrature fit over one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureFit {
    /// `phi` of `a(t) sin(omega t + phi)`, in `(-pi, pi]`.
    pub phase: f64,
    /// Envelope `a` at the window centre.
    pub amplitude: f64,
}

/// Fits `a(t) sin(omega t + phi)` with a slowly varying envelope over
/// `[start, start + window]`. The quadrature coefficients may vary
/// linearly across the window and are read at its centre.
pub fn fit_quadrature(
    times: &[f64],
    values: &[f64],
    frequency: f64,
    start: f64,
    window: f64,
) -> Result<QuadratureFit> {
    if times.len() != values.len() {
        return Err(ReadoutError::InvalidConfig("trace length mismatch".into()));
    }
    let end = start + window * (1.0 + 1e-12);
    let picked: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= start && **t <= end)
        .map(|(t, v)| (*t, *v))
        .collect();
    let scale = picked.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
    if scale < DEGENERATE_TOL || picked.len() < 4 {
        return Err(ReadoutError::DegenerateFit);
    }
    let mid = start + 0.5 * window;
    let design = DMatrix::from_fn(picked.len(), 4, |r, c| {
        let t = picked[r].0;
        let (s, co) = (frequency * t).sin_cos();
        let u = (t - mid) / window;
        match c {
            0 => co,
            1 => s,
            2 => u * co,
            _ => u * s,
        }
    });
    let rhs = DVector::from_iterator(picked.len(), picked.iter().map(|(_, v)| v / scale));
    let coeffs = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| ReadoutError::DegenerateFit)?;
    let (c1, c2) = (coeffs[0], coeffs[1]);
    if c1.hypot(c2) < DEGENERATE_TOL {
        return Err(ReadoutError::DegenerateFit);
    }
    Ok(QuadratureFit {
        phase: wrap_phase(c1.atan2(c2)),
        amplitude: scale * c1.hypot(c2),
    })
}

/// Phase of the trace over the first `window` of readout time.
pub fn extract_phase(times: &[f64], values: &[f64], frequency: f64, window: f64) -> Result<f64> {
    let start = *times.first().ok_or(ReadoutError::DegenerateFit)?;
    Ok(fit_quadrature(times, values, frequency, start, window)?.phase)
}

/// Angular frequency from the spacing of sign changes.
pub fn zero_crossing_frequency(times: &[f64], values: &[f64]) -> f64 {
    let crossings: Vec<f64> = times
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[0] * v[1] < 0.0)
        .map(|(t, v)| t[0] + (t[1] - t[0]) * v[0] / (v[0] - v[1]))
        .collect();
    match (crossings.first(), crossings.last()) {
        (Some(a), Some(b)) if crossings.len() >= 2 => PI * (crossings.len() - 1) as f64 / (b - a),
        _ => f64::NAN,
    }
}

/// Full readout for one elapsed time.
pub fn read_out(config: &ReadoutConfig) -> Result<FieldTrace> {
    let (state, _) = prepare_emitter(config)?;
    emit_field_trace(&state, config)
}
