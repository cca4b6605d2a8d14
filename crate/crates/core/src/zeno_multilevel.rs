//! Three-level (V) and four-level atom pairs coupled to two cavity modes.
//!
//! The V system shares a single ground state between both excited levels,
//! which lets a subradiant pair absorb a photon from the *other* mode. The
//! four-level system gives each excited level its own ground state, closing
//! that channel, and supports the full Zeno protocol on both manifolds.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::hilbert::{
    self, build_basis, OperatorMatrix, OperatorSum, ProductBasis, StateVector, Subsystem,
};
use crate::zeno_two_level::{
    coupling_for_half_flop, survival_forms, Result, Schedule, SurvivalForms, SurvivalTrace,
    ZenoCycle, ZenoError, DEFAULT_MEASURE_FRACTION,
};

/// Level indices of a four-level atom.
pub mod four {
    pub const G1: usize = 0;
    pub const G2: usize = 1;
    pub const E1: usize = 2;
    pub const E2: usize = 3;
}

/// Level indices of a three-level V atom.
pub mod three {
    pub const G: usize = 0;
    pub const E1: usize = 1;
    pub const E2: usize = 2;
}

const ATOM_A: usize = 0;
const ATOM_B: usize = 1;
const MODE_1: usize = 2;
const MODE_2: usize = 3;

/// Default photon number for the four-level runs.
pub const DEFAULT_PHOTONS: usize = 8;

/// Allowed `|omega_k - mean transition k|` before a mode counts as detuned.
pub const RESONANCE_TOL: f64 = 1e-9;

/// Level energies (angular frequencies) of one four-level atom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourLevelEnergies {
    pub g1: f64,
    pub g2: f64,
    pub e1: f64,
    pub e2: f64,
}

impl FourLevelEnergies {
    pub fn level(&self, index: usize) -> f64 {
        match index {
            four::G1 => self.g1,
            four::G2 => self.g2,
            four::E1 => self.e1,
            _ => self.e2,
        }
    }

    fn transition(&self, k: usize) -> f64 {
        if k == 1 {
            self.e1 - self.g1
        } else {
            self.e2 - self.g2
        }
    }

    pub fn average(&self, other: &Self) -> Self {
        FourLevelEnergies {
            g1: 0.5 * (self.g1 + other.g1),
            g2: 0.5 * (self.g2 + other.g2),
            e1: 0.5 * (self.e1 + other.e1),
            e2: 0.5 * (self.e2 + other.e2),
        }
    }
}

/// Reference level scheme (ground levels at 0, excited at 120 and 110).
pub const REFERENCE_LEVELS: FourLevelEnergies = FourLevelEnergies {
    g1: 0.0,
    g2: 0.0,
    e1: 120.0,
    e2: 110.0,
};

#[derive(Clone, Debug, PartialEq)]
pub struct FourLevelConfig {
    pub mode_frequencies: [f64; 2],
    pub atom_a: FourLevelEnergies,
    pub atom_b: FourLevelEnergies,
    pub coupling: f64,
    pub photon_number: usize,
    pub free_interval: f64,
    pub measure_interval: f64,
    pub final_time: f64,
    pub fock_cutoffs: [usize; 2],
    pub record_every: usize,
}

impl FourLevelConfig {
    /// Reference levels split symmetrically so that transition `k` of the
    /// two atoms differs by `2 Delta_k`, with resonant modes and the
    /// half-flop coupling for a measurement period `tau + tau_m`.
    pub fn with_splittings(deltas: [f64; 2], period: f64, final_time: f64) -> Self {
        let base = REFERENCE_LEVELS;
        let atom_a = FourLevelEnergies {
            e1: base.e1 + deltas[0],
            e2: base.e2 + deltas[1],
            ..base
        };
        let atom_b = FourLevelEnergies {
            e1: base.e1 - deltas[0],
            e2: base.e2 - deltas[1],
            ..base
        };
        let n = DEFAULT_PHOTONS;
        let measure_interval = period * DEFAULT_MEASURE_FRACTION;
        FourLevelConfig {
            mode_frequencies: [base.e1 - base.g1, base.e2 - base.g2],
            atom_a,
            atom_b,
            coupling: coupling_for_half_flop(measure_interval, n),
            photon_number: n,
            free_interval: period - measure_interval,
            measure_interval,
            final_time,
            fock_cutoffs: [n + 3, n + 3],
            record_every: 1,
        }
    }

    pub fn period(&self) -> f64 {
        self.free_interval + self.measure_interval
    }

    /// Half the difference of the two atoms' transition `k` (1 or 2).
    pub fn delta(&self, k: usize) -> f64 {
        0.5 * (self.atom_a.transition(k) - self.atom_b.transition(k))
    }

    /// `omega_k` minus the atom-averaged transition `k`.
    pub fn resonance_mismatch(&self, k: usize) -> f64 {
        let mean = 0.5 * (self.atom_a.transition(k) + self.atom_b.transition(k));
        self.mode_frequencies[k - 1] - mean
    }

    /// Modes whose frequency misses the averaged transition.
    pub fn detuned_modes(&self) -> Vec<usize> {
        (1..=2)
            .filter(|&k| self.resonance_mismatch(k).abs() > RESONANCE_TOL)
            .collect()
    }

    /// Cosine left on manifold 2 when `tau_m` is the half flop of
    /// manifold 1. Both manifolds see the same coupling and photon number,
    /// so this vanishes unless `tau_m` was set by hand.
    pub fn manifold_residual_cosine(&self) -> f64 {
        (self.coupling * self.measure_interval * (self.photon_number as f64 + 0.5).sqrt()).cos()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ZenoError::InvalidConfig(msg.to_string()));
        if self.free_interval <= 0.0 || self.measure_interval < 0.0 {
            return bad("intervals must be positive");
        }
        if self.final_time < self.period() {
            return bad("final_time must cover at least one cycle");
        }
        if self
            .fock_cutoffs
            .iter()
            .any(|&c| c < self.photon_number + 2)
        {
            return bad("fock cutoffs must be at least photon_number + 2");
        }
        if self.photon_number > 0 && self.coupling <= 0.0 {
            return bad("coupling must be positive when photons are injected");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<Arc<ProductBasis>> {
        Ok(build_basis(&[
            Subsystem::atom(4),
            Subsystem::atom(4),
            Subsystem::mode(self.fock_cutoffs[0]),
            Subsystem::mode(self.fock_cutoffs[1]),
        ])?)
    }
}

/// V-configuration pair: `E1 <-> G` via mode 1, `E2 <-> G` via mode 2.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreeLevelConfig {
    pub mode_frequencies: [f64; 2],
    /// `[E1, E2]` energies of atom A (ground at 0).
    pub atom_a: [f64; 2],
    pub atom_b: [f64; 2],
    pub coupling: f64,
    pub fock_cutoffs: [usize; 2],
}

impl ThreeLevelConfig {
    pub fn resonant(coupling: f64, photons: usize) -> Self {
        let levels = [REFERENCE_LEVELS.e1, REFERENCE_LEVELS.e2];
        ThreeLevelConfig {
            mode_frequencies: levels,
            atom_a: levels,
            atom_b: levels,
            coupling,
            fock_cutoffs: [photons + 3, photons + 3],
        }
    }

    pub fn basis(&self) -> Result<Arc<ProductBasis>> {
        Ok(build_basis(&[
            Subsystem::atom(3),
            Subsystem::atom(3),
            Subsystem::mode(self.fock_cutoffs[0]),
            Subsystem::mode(self.fock_cutoffs[1]),
        ])?)
    }
}

/// Mode energies plus the diagonal atomic energies `energy(atom, level)`.
fn diagonal_terms(
    h: &mut OperatorSum,
    freqs: [f64; 2],
    energy: impl Fn(usize, usize) -> f64,
) -> &mut OperatorSum {
    h.add_diagonal(|d| {
        freqs[0] * (d[MODE_1] as f64 + 0.5)
            + freqs[1] * (d[MODE_2] as f64 + 0.5)
            + energy(ATOM_A, d[ATOM_A])
            + energy(ATOM_B, d[ATOM_B])
    })
}

pub fn build_three_level_hamiltonian(config: &ThreeLevelConfig) -> Result<OperatorMatrix> {
    let basis = config.basis()?;
    let mut h = OperatorSum::new(&basis);
    diagonal_terms(&mut h, config.mode_frequencies, |atom, level| {
        let levels = if atom == ATOM_A {
            config.atom_a
        } else {
            config.atom_b
        };
        match level {
            three::E1 => levels[0],
            three::E2 => levels[1],
            _ => 0.0,
        }
    });
    let g = 0.5 * config.coupling;
    for atom in [ATOM_A, ATOM_B] {
        h.add_exchange(g, atom, three::E1, three::G, MODE_1)?
            .add_exchange(g, atom, three::E2, three::G, MODE_2)?;
    }
    Ok(h.build()?)
}

/// Four-level Hamiltonian; `coupled = false` drops the atom-field terms.
/// Only `E1 <-> G1` (mode 1) and `E2 <-> G2` (mode 2) couple.
pub fn build_four_level_hamiltonian(
    config: &FourLevelConfig,
    coupled: bool,
) -> Result<OperatorMatrix> {
    let basis = config.basis()?;
    let mut h = OperatorSum::new(&basis);
    diagonal_terms(&mut h, config.mode_frequencies, |atom, level| {
        if atom == ATOM_A {
            config.atom_a.level(level)
        } else {
            config.atom_b.level(level)
        }
    });
    if coupled {
        let g = 0.5 * config.coupling;
        for atom in [ATOM_A, ATOM_B] {
            h.add_exchange(g, atom, four::E1, four::G1, MODE_1)?
                .add_exchange(g, atom, four::E2, four::G2, MODE_2)?;
        }
    }
    Ok(h.build()?)
}

/// `N_k`: atoms in `E_k` plus photons in mode `k`, for either level scheme
/// (`e1`, `e2` are the excited-level indices).
pub fn manifold_excitation(
    basis: &Arc<ProductBasis>,
    k: usize,
    e1: usize,
    e2: usize,
) -> Result<OperatorMatrix> {
    let (level, mode) = if k == 1 { (e1, MODE_1) } else { (e2, MODE_2) };
    Ok(OperatorMatrix::diagonal(basis, |d| {
        let atoms = (d[ATOM_A] == level) as usize + (d[ATOM_B] == level) as usize;
        C64::new((atoms + d[mode]) as f64, 0.0)
    })?)
}

/// `[(|E1 G> - |G E1>) + (|E2 G> - |G E2>)] / 2 ⊗ |0,0>`.
pub fn initial_state_three(config: &ThreeLevelConfig) -> Result<StateVector> {
    use three::*;
    let basis = config.basis()?;
    let (p, m) = (C64::new(1.0, 0.0), C64::new(-1.0, 0.0));
    Ok(StateVector::superposition(
        &basis,
        &[
            (p, &[E1, G, 0, 0]),
            (m, &[G, E1, 0, 0]),
            (p, &[E2, G, 0, 0]),
            (m, &[G, E2, 0, 0]),
        ],
    )?)
}

/// `[(|E1 G1> - |G1 E1>) + (|E2 G2> - |G2 E2>)] / 2 ⊗ |0,0>`.
pub fn initial_state_four(config: &FourLevelConfig) -> Result<StateVector> {
    use four::*;
    let basis = config.basis()?;
    let (p, m) = (C64::new(1.0, 0.0), C64::new(-1.0, 0.0));
    Ok(StateVector::superposition(
        &basis,
        &[
            (p, &[E1, G1, 0, 0]),
            (m, &[G1, E1, 0, 0]),
            (p, &[E2, G2, 0, 0]),
            (m, &[G2, E2, 0, 0]),
        ],
    )?)
}

/// Population with the two atoms in different manifolds
/// (`{G1, E1}` versus `{G2, E2}`); unreachable from the four-level
/// initial state.
pub fn cross_channel_population(state: &StateVector) -> f64 {
    let manifold = |level: usize| (level == four::G2 || level == four::E2) as usize;
    state.population_where(|d| manifold(d[ATOM_A]) != manifold(d[ATOM_B]))
}

fn mixed_excitation_population(state: &StateVector, e1: usize, e2: usize) -> f64 {
    state.population_where(|d| {
        (d[ATOM_A] == e1 && d[ATOM_B] == e2) || (d[ATOM_A] == e2 && d[ATOM_B] == e1)
    })
}

/// Probability that the E1 subradiant pair, with `photons` in both modes,
/// absorbs from mode 2 into an `|E1 E2>` / `|E2 E1>` configuration during
/// `measure_interval`.
pub fn three_level_leakage(
    config: &ThreeLevelConfig,
    photons: usize,
    measure_interval: f64,
) -> Result<f64> {
    use three::*;
    let basis = config.basis()?;
    let start = StateVector::superposition(
        &basis,
        &[
            (C64::new(1.0, 0.0), &[E1, G, photons, photons]),
            (C64::new(-1.0, 0.0), &[G, E1, photons, photons]),
        ],
    )?;
    let h = build_three_level_hamiltonian(config)?;
    let out = hilbert::evolve(&start, &h, measure_interval)?;
    Ok(mixed_excitation_population(&out, E1, E2))
}

/// The same computation for the four-level pair (E1/G1 subradiant half).
pub fn four_level_leakage(
    config: &FourLevelConfig,
    photons: usize,
    measure_interval: f64,
) -> Result<f64> {
    use four::*;
    let basis = config.basis()?;
    let start = StateVector::superposition(
        &basis,
        &[
            (C64::new(1.0, 0.0), &[E1, G1, photons, photons]),
            (C64::new(-1.0, 0.0), &[G1, E1, photons, photons]),
        ],
    )?;
    let h = build_four_level_hamiltonian(config, true)?;
    let out = hilbert::evolve(&start, &h, measure_interval)?;
    Ok(mixed_excitation_population(&out, E1, E2))
}

/// Per-cycle error `((Delta_1^2 + Delta_2^2) / 2) tau^2`.
pub fn pe_four_level(delta1: f64, delta2: f64, free_interval: f64) -> Result<f64> {
    let p_error = 0.5 * (delta1 * delta1 + delta2 * delta2) * free_interval * free_interval;
    if p_error > 1.0 {
        return Err(ZenoError::OutOfRegime { p_error });
    }
    Ok(p_error)
}

pub fn ps_four_level(
    delta1: f64,
    delta2: f64,
    free_interval: f64,
    measure_interval: f64,
    final_time: f64,
) -> Result<SurvivalForms> {
    let p_error = pe_four_level(delta1, delta2, free_interval)?;
    Ok(survival_forms(
        p_error,
        0.5 * (delta1 * delta1 + delta2 * delta2),
        free_interval + measure_interval,
        final_time,
    ))
}

pub fn four_level_cycle(config: &FourLevelConfig) -> Result<ZenoCycle> {
    config.validate()?;
    ZenoCycle::new(
        &build_four_level_hamiltonian(config, false)?,
        config.free_interval,
        &build_four_level_hamiltonian(config, true)?,
        config.measure_interval,
        vec![MODE_1, MODE_2],
        config.photon_number,
    )
}

/// Zeno protocol on both manifolds, starting from the four-level initial
/// state.
pub fn run_four_level_protocol(config: &FourLevelConfig) -> Result<SurvivalTrace> {
    Ok(run_four_level_protocol_with_state(config)?.0)
}

pub fn run_four_level_protocol_with_state(
    config: &FourLevelConfig,
) -> Result<(SurvivalTrace, StateVector)> {
    let engine = four_level_cycle(config)?;
    let drift_h = build_four_level_hamiltonian(config, false)?;
    let (d1, d2) = (config.delta(1), config.delta(2));
    let (tau, tau_m) = (config.free_interval, config.measure_interval);
    let analytic = |t: f64| match ps_four_level(d1, d2, tau, tau_m, t) {
        Ok(f) => (f.exponential, f.product),
        Err(_) => (f64::NAN, f64::NAN),
    };
    engine.run(
        &initial_state_four(config)?,
        Schedule {
            drift_h: &drift_h,
            free_interval: tau,
            measure_interval: tau_m,
            final_time: config.final_time,
            record_every: config.record_every,
        },
        analytic,
    )
}
