//! Zeno locking of the relative phase of two two-level atoms sharing one
//! cavity mode.
//!
//! A cycle is: free drift for `tau` with the mode empty, injection of `n`
//! photons, coupled evolution for `tau_m` (half a Rabi flop of the
//! superradiant component), projection onto "still `n` photons", and removal
//! of the photons. The success branch is tracked with its cumulative
//! probability.
//!
//! Units are dimensionless with hbar = 1; all frequencies are angular.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::hilbert::{
    self, atomic_projector, build_basis, number, project_photon_number, raise_with_absorption,
    replace_mode_state, HilbertError, OperatorMatrix, OperatorSum, ProductBasis, Propagator,
    StateVector, Subsystem,
};

/// Ground and excited level indices of a two-level atom.
pub const G: usize = 0;
pub const E: usize = 1;

/// Upper bound on the combined population of a mode's two highest Fock
/// levels before a run is considered truncated.
pub const CUTOFF_TOL: f64 = 1e-8;

/// Default injected photon number.
pub const DEFAULT_PHOTONS: usize = 12;

/// Default `tau_m / (tau + tau_m)` when the coupling is derived from the
/// measurement period.
pub const DEFAULT_MEASURE_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZenoError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("per-cycle error probability {p_error} exceeds 1 (outside the perturbative regime)")]
    OutOfRegime { p_error: f64 },
    #[error("mode {mode} must be empty here (vacuum population {vacuum})")]
    ModeNotEmpty { mode: usize, vacuum: f64 },
    #[error("success branch has zero probability")]
    ZeroSuccess,
}

pub type Result<T> = std::result::Result<T, ZenoError>;

/// Parameters of the two-atom protocol. Atom frequencies are
/// `omega + delta ± Delta`; both atoms couple with strength `Omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLevelConfig {
    pub cavity_frequency: f64,
    pub common_offset: f64,
    pub half_difference: f64,
    pub coupling: f64,
    pub photon_number: usize,
    pub free_interval: f64,
    pub measure_interval: f64,
    pub final_time: f64,
    pub fock_cutoff: usize,
    /// Keep every `record_every`-th cycle in the trace (the last cycle is
    /// always kept).
    pub record_every: usize,
}

impl TwoLevelConfig {
    /// Config for a measurement period `tau + tau_m`, with `tau_m` a fixed
    /// small fraction of the period and the coupling chosen so that `tau_m`
    /// is exactly the half-flop time for `n` photons.
    pub fn with_period(half_difference: f64, period: f64, final_time: f64) -> Self {
        Self::with_period_and_photons(half_difference, period, final_time, DEFAULT_PHOTONS)
    }

    pub fn with_period_and_photons(
        half_difference: f64,
        period: f64,
        final_time: f64,
        photon_number: usize,
    ) -> Self {
        let measure_interval = period * DEFAULT_MEASURE_FRACTION;
        TwoLevelConfig {
            cavity_frequency: 0.0,
            common_offset: 0.0,
            half_difference,
            coupling: coupling_for_half_flop(measure_interval, photon_number),
            photon_number,
            free_interval: period - measure_interval,
            measure_interval,
            final_time,
            fock_cutoff: photon_number + 3,
            record_every: 1,
        }
    }

    pub fn period(&self) -> f64 {
        self.free_interval + self.measure_interval
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ZenoError::InvalidConfig(msg.to_string()));
        let finite = [
            self.cavity_frequency,
            self.common_offset,
            self.half_difference,
            self.coupling,
            self.free_interval,
            self.measure_interval,
            self.final_time,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        if self.free_interval <= 0.0 {
            return bad("free_interval must be positive");
        }
        if self.measure_interval < 0.0 {
            return bad("measure_interval must be non-negative");
        }
        if self.final_time < self.period() {
            return bad("final_time must cover at least one cycle");
        }
        if self.fock_cutoff < self.photon_number + 2 {
            return bad("fock_cutoff must be at least photon_number + 2");
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
            Subsystem::atom(2),
            Subsystem::atom(2),
            Subsystem::mode(self.fock_cutoff),
        ])?)
    }
}

const ATOM_A: usize = 0;
const ATOM_B: usize = 1;
const MODE: usize = 2;

/// Smallest `tau_m` with `cos(Omega tau_m sqrt(n + 1/2)) = 0`.
pub fn half_flop_time(coupling: f64, photons: usize) -> Result<f64> {
    if coupling.is_nan() || coupling <= 0.0 {
        return Err(ZenoError::InvalidConfig(format!(
            "coupling must be positive, got {coupling}"
        )));
    }
    Ok(PI / (2.0 * coupling * (photons as f64 + 0.5).sqrt()))
}

/// Coupling for which `tau_m` is the half-flop time.
pub fn coupling_for_half_flop(measure_interval: f64, photons: usize) -> f64 {
    PI / (2.0 * measure_interval * (photons as f64 + 0.5).sqrt())
}

/// Rotating-wave Hamiltonian of two atoms and one mode; `coupled = false`
/// drops the atom-field terms.
pub fn build_two_level_hamiltonian(
    config: &TwoLevelConfig,
    coupled: bool,
) -> Result<OperatorMatrix> {
    let basis = config.basis()?;
    let omega = config.cavity_frequency;
    let omega_a = omega + config.common_offset + config.half_difference;
    let omega_b = omega + config.common_offset - config.half_difference;
    let mut h = OperatorSum::new(&basis);
    h.add(omega, &number(&basis, MODE)?)?
        .add(0.5 * omega, &OperatorMatrix::identity(&basis))?
        .add(omega_a, &atomic_projector(&basis, ATOM_A, E, E)?)?
        .add(omega_b, &atomic_projector(&basis, ATOM_B, E, E)?)?;
    if coupled {
        let g = 0.5 * config.coupling;
        for atom in [ATOM_A, ATOM_B] {
            h.add_with_adjoint(g, &raise_with_absorption(&basis, atom, E, G, MODE)?)?;
        }
    }
    Ok(h.build()?)
}

/// Atomic excitations plus photons.
pub fn excitation_number(basis: &Arc<ProductBasis>) -> Result<OperatorMatrix> {
    Ok(OperatorMatrix::diagonal(basis, |d| {
        C64::new((d[ATOM_A] + d[ATOM_B] + d[MODE]) as f64, 0.0)
    })?)
}

fn dicke_state(config: &TwoLevelConfig, photons: usize, sign: f64) -> Result<StateVector> {
    let basis = config.basis()?;
    Ok(StateVector::superposition(
        &basis,
        &[
            (C64::new(1.0, 0.0), &[E, G, photons]),
            (C64::new(sign, 0.0), &[G, E, photons]),
        ],
    )?)
}

/// `(|EG> - |GE>)/sqrt(2) ⊗ |k>`.
pub fn subradiant_state(config: &TwoLevelConfig, photons: usize) -> Result<StateVector> {
    dicke_state(config, photons, -1.0)
}

/// `(|EG> + |GE>)/sqrt(2) ⊗ |k>`.
pub fn superradiant_state(config: &TwoLevelConfig, photons: usize) -> Result<StateVector> {
    dicke_state(config, photons, 1.0)
}

pub(crate) fn require_vacuum(state: &StateVector, mode: usize) -> Result<()> {
    let vacuum = state.mode_population(mode, 0)?;
    if vacuum < 1.0 - hilbert::PURITY_TOL * state.norm_squared().max(1.0) {
        return Err(ZenoError::ModeNotEmpty { mode, vacuum });
    }
    Ok(())
}

/// Exact uncoupled evolution for `tau`, mode in vacuum.
pub fn free_drift(state: &StateVector, config: &TwoLevelConfig) -> Result<StateVector> {
    require_vacuum(state, MODE)?;
    let h = build_two_level_hamiltonian(config, false)?;
    Ok(hilbert::evolve(state, &h, config.free_interval)?)
}

/// Injects `n` photons and evolves the coupled system for `tau_m`.
pub fn measurement_segment(state: &StateVector, config: &TwoLevelConfig) -> Result<StateVector> {
    require_vacuum(state, MODE)?;
    let loaded = replace_mode_state(state, MODE, config.photon_number)?;
    let h = build_two_level_hamiltonian(config, true)?;
    Ok(hilbert::evolve(&loaded, &h, config.measure_interval)?)
}

/// Success-branch state after one cycle and the probability of that branch.
#[derive(Clone, Debug)]
pub struct CycleOutcome {
    pub state: StateVector,
    pub success_probability: f64,
    /// Population of the two highest Fock levels just before projection.
    pub top_population: f64,
}

/// One drift + measurement + projection + photon-removal cycle.
pub fn zeno_cycle(state: &StateVector, config: &TwoLevelConfig) -> Result<CycleOutcome> {
    ZenoCycle::two_level(config)?.cycle(state)
}

/// Precomputed propagators for repeated Zeno cycles on any set of modes.
#[derive(Clone, Debug)]
pub struct ZenoCycle {
    drift: Propagator,
    measure: Propagator,
    modes: Vec<usize>,
    photons: usize,
}

impl ZenoCycle {
    pub fn new(
        drift_h: &OperatorMatrix,
        free_interval: f64,
        measure_h: &OperatorMatrix,
        measure_interval: f64,
        modes: Vec<usize>,
        photons: usize,
    ) -> Result<Self> {
        Ok(ZenoCycle {
            drift: Propagator::new(drift_h, free_interval)?,
            measure: Propagator::new(measure_h, measure_interval)?,
            modes,
            photons,
        })
    }

    pub fn two_level(config: &TwoLevelConfig) -> Result<Self> {
        config.validate()?;
        Self::new(
            &build_two_level_hamiltonian(config, false)?,
            config.free_interval,
            &build_two_level_hamiltonian(config, true)?,
            config.measure_interval,
            vec![MODE],
            config.photon_number,
        )
    }

    pub fn drift(&self, state: &StateVector) -> Result<StateVector> {
        Ok(self.drift.apply(state)?)
    }

    pub fn cycle(&self, state: &StateVector) -> Result<CycleOutcome> {
        for &m in &self.modes {
            require_vacuum(state, m)?;
        }
        let mut s = self.drift.apply(state)?;
        for &m in &self.modes {
            s = replace_mode_state(&s, m, self.photons)?;
        }
        s = self.measure.apply(&s)?;
        let mut top_population: f64 = 0.0;
        for &m in &self.modes {
            let pops = s.mode_populations(m)?;
            let k = pops.len();
            top_population = top_population.max(pops[k - 1] + pops[k - 2]);
        }
        let mut success_probability = 1.0;
        for &m in &self.modes {
            let p = project_photon_number(&s, m, self.photons)?;
            success_probability *= p.probability;
            s = p.state.ok_or(ZenoError::ZeroSuccess)?;
        }
        for &m in &self.modes {
            s = replace_mode_state(&s, m, 0)?;
        }
        Ok(CycleOutcome {
            state: s,
            success_probability,
            top_population,
        })
    }

    /// Runs whole cycles up to `final_time`; a leftover shorter than a
    /// period is spent as free drift without measurement (it changes the
    /// final state but not the survival probability).
    pub(crate) fn run(
        &self,
        initial: &StateVector,
        schedule: Schedule,
        analytic: impl Fn(f64) -> (f64, f64),
    ) -> Result<(SurvivalTrace, StateVector)> {
        let period = schedule.free_interval + schedule.measure_interval;
        let cycles = (schedule.final_time / period * (1.0 + 1e-12)).floor() as usize;
        let mut trace = SurvivalTrace::start(analytic(0.0));
        let mut state = initial.clone();
        let mut p_success = 1.0;
        for j in 1..=cycles {
            let out = self.cycle(&state)?;
            p_success *= out.success_probability;
            trace.max_top_population = trace.max_top_population.max(out.top_population);
            state = out.state;
            if j % schedule.record_every == 0 || j == cycles {
                let t = j as f64 * period;
                let (exp_form, product_form) = analytic(t);
                trace.times.push(t);
                trace.p_success.push(p_success);
                trace.p_error_per_cycle.push(1.0 - out.success_probability);
                trace.analytic_p_s.push(exp_form);
                trace.analytic_product.push(product_form);
            }
        }
        let leftover = schedule.final_time - cycles as f64 * period;
        if leftover > 1e-12 * schedule.final_time {
            let h = &schedule.drift_h;
            state = hilbert::evolve(&state, h, leftover)?;
        }
        Ok((trace, state))
    }
}

pub(crate) struct Schedule<'a> {
    pub drift_h: &'a OperatorMatrix,
    pub free_interval: f64,
    pub measure_interval: f64,
    pub final_time: f64,
    pub record_every: usize,
}

/// Survival probability of the locked (subradiant) branch over time.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalTrace {
    pub times: Vec<f64>,
    pub p_success: Vec<f64>,
    pub p_error_per_cycle: Vec<f64>,
    /// Exponential closed form `exp(-rate (tau + tau_m) t)`.
    pub analytic_p_s: Vec<f64>,
    /// Product closed form `(1 - P_E)^(t / (tau + tau_m))`.
    pub analytic_product: Vec<f64>,
    pub max_top_population: f64,
}

impl SurvivalTrace {
    fn start((exp_form, product_form): (f64, f64)) -> Self {
        SurvivalTrace {
            times: vec![0.0],
            p_success: vec![1.0],
            p_error_per_cycle: vec![0.0],
            analytic_p_s: vec![exp_form],
            analytic_product: vec![product_form],
            max_top_population: 0.0,
        }
    }

    /// False when the Fock truncation was visibly populated.
    pub fn is_valid(&self) -> bool {
        self.max_top_population < CUTOFF_TOL
    }

    pub fn final_p_success(&self) -> f64 {
        *self.p_success.last().unwrap_or(&1.0)
    }
}

/// Full protocol from the vacuum subradiant state.
pub fn run_protocol(config: &TwoLevelConfig) -> Result<SurvivalTrace> {
    Ok(run_protocol_with_state(config)?.0)
}

/// Like [`run_protocol`], also returning the success-branch state at
/// `final_time`.
pub fn run_protocol_with_state(config: &TwoLevelConfig) -> Result<(SurvivalTrace, StateVector)> {
    let engine = ZenoCycle::two_level(config)?;
    let drift_h = build_two_level_hamiltonian(config, false)?;
    let delta = config.half_difference;
    let (tau, tau_m) = (config.free_interval, config.measure_interval);
    let analytic = |t: f64| match ps_analytic(delta, tau, tau_m, t) {
        Ok(f) => (f.exponential, f.product),
        Err(_) => (f64::NAN, f64::NAN),
    };
    engine.run(
        &subradiant_state(config, 0)?,
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

/// Per-cycle error probability `(Delta tau)^2`.
pub fn pe_analytic(half_difference: f64, free_interval: f64) -> Result<f64> {
    let p_error = (half_difference * free_interval).powi(2);
    if p_error > 1.0 {
        return Err(ZenoError::OutOfRegime { p_error });
    }
    Ok(p_error)
}

/// Both closed forms of the survival probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurvivalForms {
    pub product: f64,
    pub exponential: f64,
}

pub(crate) fn survival_forms(
    p_error: f64,
    rate: f64,
    period: f64,
    final_time: f64,
) -> SurvivalForms {
    SurvivalForms {
        product: (1.0 - p_error).powf(final_time / period),
        exponential: (-rate * period * final_time).exp(),
    }
}

pub fn ps_analytic(
    half_difference: f64,
    free_interval: f64,
    measure_interval: f64,
    final_time: f64,
) -> Result<SurvivalForms> {
    let p_error = pe_analytic(half_difference, free_interval)?;
    Ok(survival_forms(
        p_error,
        half_difference * half_difference,
        free_interval + measure_interval,
        final_time,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(delta: f64) -> TwoLevelConfig {
        TwoLevelConfig {
            cavity_frequency: 3.0,
            common_offset: 0.0,
            ..TwoLevelConfig::with_period_and_photons(delta, 0.001, 0.01, 4)
        }
    }

    #[test]
    fn hamiltonian_structure() {
        let c = TwoLevelConfig {
            common_offset: 0.3,
            ..cfg(2.0)
        };
        let h = build_two_level_hamiltonian(&c, true).unwrap();
        assert!(h.is_hermitian());
        let n = excitation_number(h.basis()).unwrap();
        assert!(h.commutator_norm(&n).unwrap() < 1e-12);
        let sym = TwoLevelConfig {
            common_offset: 0.0,
            ..cfg(0.0)
        };
        let h0 = build_two_level_hamiltonian(&sym, false).unwrap();
        let sub = subradiant_state(&sym, 0).unwrap();
        let image = sub.apply(&h0).unwrap();
        let eigenvalue = sub.inner(&image).unwrap();
        let residual = image.amplitudes() - sub.amplitudes() * eigenvalue;
        assert!(residual.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn dicke_states() {
        let c = cfg(1.0);
        let sub = subradiant_state(&c, 2).unwrap();
        let sup = superradiant_state(&c, 2).unwrap();
        assert!((sub.norm() - 1.0).abs() < 1e-15);
        assert_eq!(
            sub.swap_subsystems(0, 1).unwrap(),
            sub.clone().scaled(C64::new(-1.0, 0.0))
        );
        assert_eq!(sub.inner(&sup).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn half_flop_values() {
        let t = half_flop_time(2.0, 12).unwrap();
        assert!((t - PI / (4.0 * 12.5f64.sqrt())).abs() < 1e-15);
        assert!((t - 0.22214).abs() < 1e-5);
        assert!((half_flop_time(4.0, 12).unwrap() - t / 2.0).abs() < 1e-16);
        let big = half_flop_time(2.0, 10_000).unwrap();
        assert!((big * (10_000.5f64).sqrt() - PI / 4.0).abs() < 1e-12);
        assert!(half_flop_time(0.0, 3).is_err());
    }

    #[test]
    fn drift_without_splitting_keeps_subradiant() {
        let c = cfg(0.0);
        let s = subradiant_state(&c, 0).unwrap();
        let out = free_drift(&s, &c).unwrap();
        assert!((out.fidelity(&s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drift_requires_empty_mode() {
        let c = cfg(1.0);
        let s = subradiant_state(&c, 3).unwrap();
        assert!(matches!(
            free_drift(&s, &c),
            Err(ZenoError::ModeNotEmpty { .. })
        ));
    }

    #[test]
    fn dark_state_survives_measurement() {
        let c = cfg(0.0);
        let out = zeno_cycle(&subradiant_state(&c, 0).unwrap(), &c).unwrap();
        assert!((out.success_probability - 1.0).abs() < 1e-10);
        let s = measurement_segment(&subradiant_state(&c, 0).unwrap(), &c).unwrap();
        assert!((s.mode_population(2, 4).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn analytic_forms() {
        assert!((pe_analytic(2.0, 0.001).unwrap() - 4e-6).abs() < 1e-20);
        assert!(matches!(
            pe_analytic(1.5, 1.0),
            Err(ZenoError::OutOfRegime { .. })
        ));
        let f = ps_analytic(0.1, 0.1, 0.0, 100.0).unwrap();
        // P_E = 1e-4
        assert!((f.product / f.exponential - 1.0).abs() < 1e-3);
        let f = ps_analytic(2.0, 0.000999, 0.000001, 100.0).unwrap();
        assert!((f.exponential - (-0.4f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let good = cfg(1.0);
        assert!(good.validate().is_ok());
        assert!(TwoLevelConfig {
            fock_cutoff: 5,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(TwoLevelConfig {
            free_interval: 0.0,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(TwoLevelConfig {
            final_time: 1e-4,
            ..good.clone()
        }
        .validate()
        .is_err());
        assert!(TwoLevelConfig {
            coupling: 0.0,
            ..good
        }
        .validate()
        .is_err());
    }

    #[test]
    fn leftover_time_is_drift_only() {
        let mut c = cfg(2.0);
        c.final_time = 0.0105;
        let (trace, _) = run_protocol_with_state(&c).unwrap();
        assert_eq!(trace.times.len(), 11);
        assert!(trace.is_valid());
    }
}
