//! Tensor-product Hilbert spaces of few-level atoms and truncated bosonic
//! modes, with dense operators and exact piecewise-constant evolution.
//!
//! Basis ordering is row-major over the subsystem list: the last subsystem
//! varies fastest. [`build_basis`] always places atoms before modes, keeping
//! declaration order within each group, so subsystem indices used by the
//! operator constructors refer to that reordered list.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Tolerance for the Hermitian/unitary flags carried by [`OperatorMatrix`].
pub const FLAG_TOL: f64 = 1e-12;

/// Reduced purity a mode must reach before its state may be swapped out.
pub const PURITY_TOL: f64 = 1e-10;

/// Born probabilities at or below this are reported as empty outcomes.
pub const ZERO_PROBABILITY: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("basis needs at least one subsystem")]
    EmptyBasis,
    #[error("subsystem {index} has zero dimension")]
    ZeroDimension { index: usize },
    #[error("atoms must have 2, 3 or 4 levels, got {0}")]
    UnsupportedLevels(usize),
    #[error("subsystem index {0} out of range")]
    NoSuchSubsystem(usize),
    #[error("subsystem {0} is an atom, expected a mode")]
    NotAMode(usize),
    #[error("subsystem {0} is a mode, expected an atom")]
    NotAnAtom(usize),
    #[error("level {level} out of range for subsystem {index} of dimension {dim}")]
    LevelOutOfRange {
        index: usize,
        level: usize,
        dim: usize,
    },
    #[error("operands live on different bases")]
    BasisMismatch,
    #[error("expected {expected} amplitudes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("hamiltonian is not hermitian (max |H - H^dag| = {0:e})")]
    NotHermitian(f64),
    #[error("mode {mode} is entangled with the rest of the system (purity {purity})")]
    Entangled { mode: usize, purity: f64 },
    #[error("state has zero norm")]
    ZeroNorm,
}

pub type Result<T> = std::result::Result<T, HilbertError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subsystem {
    /// Few-level atom; levels are indexed `0..levels`.
    Atom { levels: usize },
    /// Bosonic mode holding occupancies `0..=cutoff`.
    Mode { cutoff: usize },
}

impl Subsystem {
    pub fn atom(levels: usize) -> Self {
        Subsystem::Atom { levels }
    }

    pub fn mode(cutoff: usize) -> Self {
        Subsystem::Mode { cutoff }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Subsystem::Atom { levels } => levels,
            Subsystem::Mode { cutoff } => cutoff + 1,
        }
    }

    pub fn is_mode(&self) -> bool {
        matches!(self, Subsystem::Mode { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductBasis {
    subsystems: Vec<Subsystem>,
    strides: Vec<usize>,
    dimension: usize,
}

/// Builds a product basis with atoms ordered before modes.
pub fn build_basis(specs: &[Subsystem]) -> Result<Arc<ProductBasis>> {
    if specs.is_empty() {
        return Err(HilbertError::EmptyBasis);
    }
    for (index, spec) in specs.iter().enumerate() {
        match *spec {
            Subsystem::Atom { levels: 0 } => return Err(HilbertError::ZeroDimension { index }),
            Subsystem::Atom { levels } if !(2..=4).contains(&levels) => {
                return Err(HilbertError::UnsupportedLevels(levels))
            }
            Subsystem::Mode { cutoff: 0 } => return Err(HilbertError::ZeroDimension { index }),
            _ => {}
        }
    }
    let subsystems: Vec<Subsystem> = specs
        .iter()
        .filter(|s| !s.is_mode())
        .chain(specs.iter().filter(|s| s.is_mode()))
        .copied()
        .collect();
    let mut strides = vec![1; subsystems.len()];
    for i in (0..subsystems.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * subsystems[i + 1].dim();
    }
    let dimension = strides[0] * subsystems[0].dim();
    Ok(Arc::new(ProductBasis {
        subsystems,
        strides,
        dimension,
    }))
}

impl ProductBasis {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn subsystem(&self, index: usize) -> Result<Subsystem> {
        self.subsystems
            .get(index)
            .copied()
            .ok_or(HilbertError::NoSuchSubsystem(index))
    }

    pub fn mode_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.subsystems[i].is_mode())
            .collect()
    }

    pub fn atom_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.subsystems[i].is_mode())
            .collect()
    }

    /// Local level of subsystem `sub` in the basis state `index`.
    #[inline]
    pub fn digit(&self, index: usize, sub: usize) -> usize {
        (index / self.strides[sub]) % self.subsystems[sub].dim()
    }

    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        (0..self.len()).map(|s| self.digit(index, s)).collect()
    }

    pub fn index_of(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.len() {
            return Err(HilbertError::LengthMismatch {
                expected: self.len(),
                got: digits.len(),
            });
        }
        let mut index = 0;
        for (s, &d) in digits.iter().enumerate() {
            let dim = self.subsystems[s].dim();
            if d >= dim {
                return Err(HilbertError::LevelOutOfRange {
                    index: s,
                    level: d,
                    dim,
                });
            }
            index += d * self.strides[s];
        }
        Ok(index)
    }

    fn check_mode(&self, mode: usize) -> Result<usize> {
        match self.subsystem(mode)? {
            Subsystem::Mode { cutoff } => Ok(cutoff),
            Subsystem::Atom { .. } => Err(HilbertError::NotAMode(mode)),
        }
    }

    fn check_atom(&self, atom: usize) -> Result<usize> {
        match self.subsystem(atom)? {
            Subsystem::Atom { levels } => Ok(levels),
            Subsystem::Mode { .. } => Err(HilbertError::NotAnAtom(atom)),
        }
    }
}

fn same_basis(a: &Arc<ProductBasis>, b: &Arc<ProductBasis>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Pure state over a [`ProductBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    basis: Arc<ProductBasis>,
    amps: DVector<C64>,
}

impl StateVector {
    /// Wraps raw amplitudes without normalizing them.
    pub fn from_amplitudes(basis: &Arc<ProductBasis>, amps: DVector<C64>) -> Result<Self> {
        if amps.len() != basis.dimension() {
            return Err(HilbertError::LengthMismatch {
                expected: basis.dimension(),
                got: amps.len(),
            });
        }
        Ok(StateVector {
            basis: Arc::clone(basis),
            amps,
        })
    }

    pub fn basis_state(basis: &Arc<ProductBasis>, digits: &[usize]) -> Result<Self> {
        let mut amps = DVector::zeros(basis.dimension());
        amps[basis.index_of(digits)?] = C64::new(1.0, 0.0);
        Self::from_amplitudes(basis, amps)
    }

    /// Normalized superposition `sum_k c_k |digits_k>`.
    pub fn superposition(basis: &Arc<ProductBasis>, terms: &[(C64, &[usize])]) -> Result<Self> {
        let mut amps = DVector::zeros(basis.dimension());
        for (c, digits) in terms {
            amps[basis.index_of(digits)?] += *c;
        }
        Self::from_amplitudes(basis, amps)?.normalized()
    }

    pub fn basis(&self) -> &Arc<ProductBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amps
    }

    pub fn amplitude(&self, digits: &[usize]) -> Result<C64> {
        Ok(self.amps[self.basis.index_of(digits)?])
    }

    pub fn norm_squared(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(HilbertError::ZeroNorm);
        }
        self.amps.unscale_mut(n);
        Ok(self)
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.amps *= factor;
        self
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        Ok(self.amps.dotc(&other.amps))
    }

    /// `|<self|other>|`, insensitive to global phase.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm())
    }

    pub fn apply(&self, op: &OperatorMatrix) -> Result<StateVector> {
        if !same_basis(&self.basis, &op.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        Ok(StateVector {
            basis: Arc::clone(&self.basis),
            amps: &op.matrix * &self.amps,
        })
    }

    /// Tensor product `self ⊗ other` on the concatenated subsystem list.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let specs: Vec<Subsystem> = self
            .basis
            .subsystems()
            .iter()
            .chain(other.basis.subsystems())
            .copied()
            .collect();
        let basis = build_basis(&specs)?;
        if basis.subsystems() != specs.as_slice() {
            // reordering would scramble the kronecker layout
            return Err(HilbertError::BasisMismatch);
        }
        let amps = self.amps.kronecker(&other.amps);
        StateVector::from_amplitudes(&basis, amps)
    }

    /// Exchanges two subsystems of equal dimension.
    pub fn swap_subsystems(&self, a: usize, b: usize) -> Result<StateVector> {
        let sa = self.basis.subsystem(a)?;
        let sb = self.basis.subsystem(b)?;
        if sa != sb {
            return Err(HilbertError::BasisMismatch);
        }
        let mut amps = DVector::zeros(self.amps.len());
        for (i, amp) in self.amps.iter().enumerate() {
            let mut digits = self.basis.multi_index(i);
            digits.swap(a, b);
            amps[self.basis.index_of(&digits)?] = *amp;
        }
        StateVector::from_amplitudes(&self.basis, amps)
    }

    /// Total population of basis states satisfying `keep`.
    pub fn population_where(&self, keep: impl Fn(&[usize]) -> bool) -> f64 {
        let mut digits = vec![0; self.basis.len()];
        let mut total = 0.0;
        for (i, amp) in self.amps.iter().enumerate() {
            fill_digits(&self.basis, i, &mut digits);
            if keep(&digits) {
                total += amp.norm_sqr();
            }
        }
        total
    }

    /// Projects onto basis states satisfying `keep` and renormalizes.
    pub fn project_where(&self, keep: impl Fn(&[usize]) -> bool) -> Projection {
        let mut digits = vec![0; self.basis.len()];
        let mut amps = self.amps.clone();
        for (i, amp) in amps.iter_mut().enumerate() {
            fill_digits(&self.basis, i, &mut digits);
            if !keep(&digits) {
                *amp = C64::new(0.0, 0.0);
            }
        }
        let probability: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if probability <= ZERO_PROBABILITY {
            return Projection {
                state: None,
                probability,
            };
        }
        amps.unscale_mut(probability.sqrt());
        Projection {
            state: Some(StateVector {
                basis: Arc::clone(&self.basis),
                amps,
            }),
            probability,
        }
    }

    /// Population of occupancy `k` in `mode`.
    pub fn mode_population(&self, mode: usize, k: usize) -> Result<f64> {
        let populations = self.mode_populations(mode)?;
        populations
            .get(k)
            .copied()
            .ok_or(HilbertError::LevelOutOfRange {
                index: mode,
                level: k,
                dim: populations.len(),
            })
    }

    /// Occupation distribution of `mode`.
    pub fn mode_populations(&self, mode: usize) -> Result<Vec<f64>> {
        let dim = self.basis.check_mode(mode)? + 1;
        let stride = self.basis.strides[mode];
        let mut populations = vec![0.0; dim];
        for (i, amp) in self.amps.iter().enumerate() {
            populations[(i / stride) % dim] += amp.norm_sqr();
        }
        Ok(populations)
    }

    /// `Tr(rho_mode^2)` of the reduced state of `mode`.
    pub fn mode_purity(&self, mode: usize) -> Result<f64> {
        let dim = self.basis.check_mode(mode)? + 1;
        let mut rho = DMatrix::<C64>::zeros(dim, dim);
        let stride = self.basis.strides[mode];
        let block = stride * dim;
        // rest indices enumerate (outer, inner) around the mode digit
        for outer in 0..self.basis.dimension() / block {
            for inner in 0..stride {
                let base = outer * block + inner;
                for k in 0..dim {
                    let ak = self.amps[base + k * stride];
                    if ak == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for l in 0..dim {
                        rho[(k, l)] += ak * self.amps[base + l * stride].conj();
                    }
                }
            }
        }
        let norm = rho.trace().re;
        if norm == 0.0 {
            return Err(HilbertError::ZeroNorm);
        }
        Ok((&rho * &rho).trace().re / (norm * norm))
    }
}

fn fill_digits(basis: &ProductBasis, index: usize, digits: &mut [usize]) {
    for (s, d) in digits.iter_mut().enumerate() {
        *d = basis.digit(index, s);
    }
}

/// Outcome of a projective measurement: the normalized post-measurement
/// state, or `None` when the outcome has zero probability.
#[derive(Clone, Debug)]
pub struct Projection {
    pub state: Option<StateVector>,
    pub probability: f64,
}

impl Projection {
    pub fn is_empty(&self) -> bool {
        self.state.is_none()
    }
}

/// Projects `mode` onto exactly `k` photons.
pub fn project_photon_number(state: &StateVector, mode: usize, k: usize) -> Result<Projection> {
    let cutoff = state.basis.check_mode(mode)?;
    if k > cutoff {
        return Err(HilbertError::LevelOutOfRange {
            index: mode,
            level: k,
            dim: cutoff + 1,
        });
    }
    let dim = cutoff + 1;
    let stride = state.basis.strides[mode];
    let mut amps = state.amps.clone();
    for (i, amp) in amps.iter_mut().enumerate() {
        if (i / stride) % dim != k {
            *amp = C64::new(0.0, 0.0);
        }
    }
    let probability: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if probability <= ZERO_PROBABILITY {
        return Ok(Projection {
            state: None,
            probability,
        });
    }
    amps.unscale_mut(probability.sqrt());
    Ok(Projection {
        state: Some(StateVector {
            basis: Arc::clone(&state.basis),
            amps,
        }),
        probability,
    })
}

/// Replaces the (unentangled) state of `mode` with the Fock state `|k>`.
pub fn replace_mode_state(state: &StateVector, mode: usize, k: usize) -> Result<StateVector> {
    let cutoff = state.basis.check_mode(mode)?;
    if k > cutoff {
        return Err(HilbertError::LevelOutOfRange {
            index: mode,
            level: k,
            dim: cutoff + 1,
        });
    }
    let dim = cutoff + 1;
    let stride = state.basis.strides[mode];
    let block = stride * dim;
    let populations = state.mode_populations(mode)?;
    let total: f64 = populations.iter().sum();
    // the dominant occupancy carries the remainder's state up to a phase
    let dominant = (0..dim)
        .max_by(|&a, &b| populations[a].total_cmp(&populations[b]))
        .unwrap_or(0);
    // purity >= p_max^2, so a nearly sharp occupancy needs no full check
    if populations[dominant] < (1.0 - 0.5 * PURITY_TOL) * total {
        let purity = state.mode_purity(mode)?;
        if purity < 1.0 - PURITY_TOL {
            return Err(HilbertError::Entangled { mode, purity });
        }
    }
    let weight = populations[dominant].sqrt();
    let mut amps = DVector::zeros(state.amps.len());
    for outer in 0..state.basis.dimension() / block {
        for inner in 0..stride {
            let base = outer * block + inner;
            amps[base + k * stride] = state.amps[base + dominant * stride] / weight;
        }
    }
    StateVector::from_amplitudes(&state.basis, amps)
}

/// Dense operator tagged with its basis and structural flags.
#[derive(Clone)]
pub struct OperatorMatrix {
    basis: Arc<ProductBasis>,
    matrix: DMatrix<C64>,
    hermitian: bool,
    unitary: OnceLock<bool>,
}

impl PartialEq for OperatorMatrix {
    fn eq(&self, other: &Self) -> bool {
        same_basis(&self.basis, &other.basis) && self.matrix == other.matrix
    }
}

impl fmt::Debug for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorMatrix")
            .field("dimension", &self.matrix.nrows())
            .field("hermitian", &self.hermitian)
            .field("unitary", &self.unitary.get())
            .finish()
    }
}

fn check_factors(basis: &ProductBasis, factors: &[(usize, &DMatrix<C64>)]) -> Result<()> {
    for &(sub, local) in factors {
        let dim = basis.subsystem(sub)?.dim();
        if local.nrows() != dim || local.ncols() != dim {
            return Err(HilbertError::LengthMismatch {
                expected: dim,
                got: local.nrows(),
            });
        }
    }
    Ok(())
}

/// Adds `coeff` times the embedded product (or its adjoint) into `matrix`.
fn scatter_product(
    basis: &ProductBasis,
    factors: &[(usize, &DMatrix<C64>)],
    coeff: C64,
    adjoint: bool,
    matrix: &mut DMatrix<C64>,
) {
    let mut images: Vec<(usize, C64)> = Vec::new();
    let mut next: Vec<(usize, C64)> = Vec::new();
    for col in 0..basis.dimension() {
        images.clear();
        images.push((col, coeff));
        for &(sub, local) in factors {
            next.clear();
            let stride = basis.strides[sub];
            for &(idx, c) in &images {
                let d = basis.digit(idx, sub);
                let base = idx - d * stride;
                for r in 0..local.nrows() {
                    let entry = local[(r, d)];
                    if entry != C64::new(0.0, 0.0) {
                        next.push((base + r * stride, c * entry));
                    }
                }
            }
            std::mem::swap(&mut images, &mut next);
        }
        for &(row, c) in &images {
            if adjoint {
                matrix[(col, row)] += c.conj();
            } else {
                matrix[(row, col)] += c;
            }
        }
    }
}

fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

impl OperatorMatrix {
    pub fn new(basis: &Arc<ProductBasis>, matrix: DMatrix<C64>) -> Result<Self> {
        let dim = basis.dimension();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(HilbertError::LengthMismatch {
                expected: dim,
                got: matrix.nrows(),
            });
        }
        let hermitian = hermitian_defect(&matrix) < FLAG_TOL;
        Ok(OperatorMatrix {
            basis: Arc::clone(basis),
            matrix,
            hermitian,
            unitary: OnceLock::new(),
        })
    }

    pub fn zeros(basis: &Arc<ProductBasis>) -> Self {
        let dim = basis.dimension();
        OperatorMatrix {
            basis: Arc::clone(basis),
            matrix: DMatrix::zeros(dim, dim),
            hermitian: true,
            unitary: OnceLock::from(false),
        }
    }

    pub fn identity(basis: &Arc<ProductBasis>) -> Self {
        let dim = basis.dimension();
        OperatorMatrix {
            basis: Arc::clone(basis),
            matrix: DMatrix::identity(dim, dim),
            hermitian: true,
            unitary: OnceLock::from(true),
        }
    }

    /// Diagonal operator `sum_i f(digits_i) |i><i|`.
    pub fn diagonal(basis: &Arc<ProductBasis>, f: impl Fn(&[usize]) -> C64) -> Result<Self> {
        let dim = basis.dimension();
        let mut digits = vec![0; basis.len()];
        let mut matrix = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            fill_digits(basis, i, &mut digits);
            matrix[(i, i)] = f(&digits);
        }
        Self::new(basis, matrix)
    }

    /// Product of local operators acting on distinct subsystems, identity
    /// elsewhere.
    pub fn product(basis: &Arc<ProductBasis>, factors: &[(usize, &DMatrix<C64>)]) -> Result<Self> {
        check_factors(basis, factors)?;
        let dim = basis.dimension();
        let mut matrix = DMatrix::zeros(dim, dim);
        scatter_product(basis, factors, C64::new(1.0, 0.0), false, &mut matrix);
        Self::new(basis, matrix)
    }

    pub fn basis(&self) -> &Arc<ProductBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Computed on first use (a dense product).
    pub fn is_unitary(&self) -> bool {
        *self.unitary.get_or_init(|| {
            let dim = self.matrix.nrows();
            let defect = self.matrix.adjoint() * &self.matrix - DMatrix::<C64>::identity(dim, dim);
            max_abs(&defect) < FLAG_TOL
        })
    }

    pub fn adjoint(&self) -> Self {
        OperatorMatrix {
            basis: Arc::clone(&self.basis),
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
            unitary: self.unitary.clone(),
        }
    }

    fn combine(&self, other: &Self, m: DMatrix<C64>) -> Result<Self> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        Self::new(&self.basis, m)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, &self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, &self.matrix - &other.matrix)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.combine(other, &self.matrix * &other.matrix)
    }

    pub fn scale(&self, factor: C64) -> Result<Self> {
        Self::new(&self.basis, &self.matrix * factor)
    }

    /// `max |[A, B]|` entrywise.
    pub fn commutator_norm(&self, other: &Self) -> Result<f64> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        Ok(max_abs(
            &(&self.matrix * &other.matrix - &other.matrix * &self.matrix),
        ))
    }
}

/// Accumulates a Hamiltonian from weighted terms, checking Hermiticity once
/// at the end.
pub struct OperatorSum {
    basis: Arc<ProductBasis>,
    matrix: DMatrix<C64>,
}

impl OperatorSum {
    pub fn new(basis: &Arc<ProductBasis>) -> Self {
        let dim = basis.dimension();
        OperatorSum {
            basis: Arc::clone(basis),
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn add(&mut self, coeff: f64, op: &OperatorMatrix) -> Result<&mut Self> {
        if !same_basis(&self.basis, &op.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        self.matrix.zip_apply(&op.matrix, |a, b| *a += b * coeff);
        Ok(self)
    }

    /// Adds `sum_i f(digits_i) |i><i|` without building the operator.
    pub fn add_diagonal(&mut self, f: impl Fn(&[usize]) -> f64) -> &mut Self {
        let mut digits = vec![0; self.basis.len()];
        for i in 0..self.basis.dimension() {
            fill_digits(&self.basis, i, &mut digits);
            self.matrix[(i, i)] += f(&digits);
        }
        self
    }

    /// Adds `coeff (P + P^dag)` for the embedded product `P` of local
    /// operators, without building `P`.
    pub fn add_product_with_adjoint(
        &mut self,
        coeff: f64,
        factors: &[(usize, &DMatrix<C64>)],
    ) -> Result<&mut Self> {
        check_factors(&self.basis, factors)?;
        let c = C64::new(coeff, 0.0);
        scatter_product(&self.basis, factors, c, false, &mut self.matrix);
        scatter_product(&self.basis, factors, c, true, &mut self.matrix);
        Ok(self)
    }

    /// Adds `coeff (|upper><lower| a + h.c.)` for `atom` and `mode`.
    pub fn add_exchange(
        &mut self,
        coeff: f64,
        atom: usize,
        upper: usize,
        lower: usize,
        mode: usize,
    ) -> Result<&mut Self> {
        let (sigma, a) = exchange_factors(&self.basis, atom, upper, lower, mode)?;
        self.add_product_with_adjoint(coeff, &[(atom, &sigma), (mode, &a)])
    }

    /// Adds `coeff (op + op^dag)`.
    pub fn add_with_adjoint(&mut self, coeff: f64, op: &OperatorMatrix) -> Result<&mut Self> {
        self.add(coeff, op)?;
        self.add(coeff, &op.adjoint())
    }

    pub fn build(self) -> Result<OperatorMatrix> {
        OperatorMatrix::new(&self.basis, self.matrix)
    }
}

fn ladder_local(cutoff: usize) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(cutoff + 1, cutoff + 1);
    for k in 1..=cutoff {
        a[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    a
}

/// Truncated annihilation operator `a|k> = sqrt(k)|k-1>` on `mode`.
pub fn annihilation(basis: &Arc<ProductBasis>, mode: usize) -> Result<OperatorMatrix> {
    let cutoff = basis.check_mode(mode)?;
    OperatorMatrix::product(basis, &[(mode, &ladder_local(cutoff))])
}

pub fn creation(basis: &Arc<ProductBasis>, mode: usize) -> Result<OperatorMatrix> {
    Ok(annihilation(basis, mode)?.adjoint())
}

pub fn number(basis: &Arc<ProductBasis>, mode: usize) -> Result<OperatorMatrix> {
    basis.check_mode(mode)?;
    OperatorMatrix::diagonal(basis, |d| C64::new(d[mode] as f64, 0.0))
}

/// Field quadrature `a + a^dag` on `mode`.
pub fn quadrature(basis: &Arc<ProductBasis>, mode: usize) -> Result<OperatorMatrix> {
    let a = annihilation(basis, mode)?;
    a.add(&a.adjoint())
}

/// `|i><j|` on `atom`, identity elsewhere.
pub fn atomic_projector(
    basis: &Arc<ProductBasis>,
    atom: usize,
    i: usize,
    j: usize,
) -> Result<OperatorMatrix> {
    let levels = basis.check_atom(atom)?;
    for level in [i, j] {
        if level >= levels {
            return Err(HilbertError::LevelOutOfRange {
                index: atom,
                level,
                dim: levels,
            });
        }
    }
    let mut local = DMatrix::zeros(levels, levels);
    local[(i, j)] = C64::new(1.0, 0.0);
    OperatorMatrix::product(basis, &[(atom, &local)])
}

/// `|upper><lower|_atom ⊗ a_mode`: absorb a photon while raising the atom.
pub fn raise_with_absorption(
    basis: &Arc<ProductBasis>,
    atom: usize,
    upper: usize,
    lower: usize,
    mode: usize,
) -> Result<OperatorMatrix> {
    let (sigma, a) = exchange_factors(basis, atom, upper, lower, mode)?;
    OperatorMatrix::product(basis, &[(atom, &sigma), (mode, &a)])
}

fn exchange_factors(
    basis: &ProductBasis,
    atom: usize,
    upper: usize,
    lower: usize,
    mode: usize,
) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let levels = basis.check_atom(atom)?;
    let cutoff = basis.check_mode(mode)?;
    for level in [upper, lower] {
        if level >= levels {
            return Err(HilbertError::LevelOutOfRange {
                index: atom,
                level,
                dim: levels,
            });
        }
    }
    let mut sigma = DMatrix::zeros(levels, levels);
    sigma[(upper, lower)] = C64::new(1.0, 0.0);
    Ok((sigma, ladder_local(cutoff)))
}

pub fn expectation(state: &StateVector, op: &OperatorMatrix) -> Result<C64> {
    state.inner(&state.apply(op)?)
}

/// Eigendecomposition of a Hermitian operator, split into the connected
/// components of its sparsity graph. Components are exact invariant
/// subspaces (e.g. excitation-number blocks of an RWA Hamiltonian).
#[derive(Clone, Debug)]
pub struct Spectrum {
    basis: Arc<ProductBasis>,
    blocks: Vec<EigenBlock>,
}

#[derive(Clone, Debug)]
struct EigenBlock {
    indices: Vec<usize>,
    energies: DVector<f64>,
    vectors: DMatrix<C64>,
}

fn connected_components(m: &DMatrix<C64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for j in 0..n {
        for i in 0..j {
            if m[(i, j)] != C64::new(0.0, 0.0) || m[(j, i)] != C64::new(0.0, 0.0) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

fn decompose(indices: Vec<usize>, m: &DMatrix<C64>) -> EigenBlock {
    let k = indices.len();
    let sub = DMatrix::from_fn(k, k, |r, c| m[(indices[r], indices[c])]);
    if k == 1 {
        return EigenBlock {
            indices,
            energies: DVector::from_element(1, sub[(0, 0)].re),
            vectors: DMatrix::identity(1, 1),
        };
    }
    let eig = sub.symmetric_eigen();
    EigenBlock {
        indices,
        energies: eig.eigenvalues,
        vectors: eig.eigenvectors,
    }
}

impl Spectrum {
    /// Block-decomposed spectrum.
    pub fn new(h: &OperatorMatrix) -> Result<Self> {
        Self::check(h)?;
        let blocks = connected_components(&h.matrix)
            .into_iter()
            .map(|idx| decompose(idx, &h.matrix))
            .collect();
        Ok(Spectrum {
            basis: Arc::clone(&h.basis),
            blocks,
        })
    }

    /// Single dense eigendecomposition of the whole matrix.
    pub fn dense(h: &OperatorMatrix) -> Result<Self> {
        Self::check(h)?;
        let indices = (0..h.basis.dimension()).collect();
        Ok(Spectrum {
            basis: Arc::clone(&h.basis),
            blocks: vec![decompose(indices, &h.matrix)],
        })
    }

    fn check(h: &OperatorMatrix) -> Result<()> {
        if !h.hermitian {
            return Err(HilbertError::NotHermitian(hermitian_defect(&h.matrix)));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn largest_block(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.indices.len())
            .max()
            .unwrap_or(0)
    }

    /// `exp(-i H t)` restricted to each block.
    pub fn propagator(&self, duration: f64) -> Propagator {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let phases = b.energies.map(|e| C64::from_polar(1.0, -e * duration));
                let mut scaled = b.vectors.clone();
                for (mut col, phase) in scaled.column_iter_mut().zip(phases.iter()) {
                    col *= *phase;
                }
                PropagatorBlock {
                    indices: b.indices.clone(),
                    unitary: scaled * b.vectors.adjoint(),
                }
            })
            .collect();
        Propagator {
            basis: Arc::clone(&self.basis),
            blocks,
        }
    }

    pub fn evolve(&self, state: &StateVector, duration: f64) -> Result<StateVector> {
        if !same_basis(&self.basis, &state.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        let mut out = DVector::zeros(state.amps.len());
        for b in &self.blocks {
            let k = b.indices.len();
            let local = DVector::from_fn(k, |r, _| state.amps[b.indices[r]]);
            let mut coeffs = b.vectors.adjoint() * local;
            for (c, e) in coeffs.iter_mut().zip(b.energies.iter()) {
                *c *= C64::from_polar(1.0, -e * duration);
            }
            let evolved = &b.vectors * coeffs;
            for (r, &i) in b.indices.iter().enumerate() {
                out[i] = evolved[r];
            }
        }
        StateVector::from_amplitudes(&state.basis, out)
    }
}

/// Precomputed block-diagonal unitary for a fixed segment duration.
#[derive(Clone, Debug)]
pub struct Propagator {
    basis: Arc<ProductBasis>,
    blocks: Vec<PropagatorBlock>,
}

#[derive(Clone, Debug)]
struct PropagatorBlock {
    indices: Vec<usize>,
    unitary: DMatrix<C64>,
}

impl Propagator {
    pub fn new(h: &OperatorMatrix, duration: f64) -> Result<Self> {
        Ok(Spectrum::new(h)?.propagator(duration))
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if !same_basis(&self.basis, &state.basis) {
            return Err(HilbertError::BasisMismatch);
        }
        let zero = C64::new(0.0, 0.0);
        let mut out = DVector::zeros(state.amps.len());
        let mut local = Vec::new();
        for b in &self.blocks {
            local.clear();
            local.extend(b.indices.iter().map(|&i| state.amps[i]));
            if local.iter().all(|a| *a == zero) {
                continue;
            }
            for (r, &i) in b.indices.iter().enumerate() {
                let row = b.unitary.row(r);
                out[i] = row.iter().zip(&local).map(|(u, a)| u * a).sum();
            }
        }
        StateVector::from_amplitudes(&state.basis, out)
    }

    /// The full unitary as an operator (dense; for inspection and tests).
    pub fn to_operator(&self) -> Result<OperatorMatrix> {
        let dim = self.basis.dimension();
        let mut m = DMatrix::zeros(dim, dim);
        for b in &self.blocks {
            for (r, &i) in b.indices.iter().enumerate() {
                for (c, &j) in b.indices.iter().enumerate() {
                    m[(i, j)] = b.unitary[(r, c)];
                }
            }
        }
        OperatorMatrix::new(&self.basis, m)
    }
}

/// `exp(-i H t)|state>` with hbar = 1.
pub fn evolve(state: &StateVector, h: &OperatorMatrix, duration: f64) -> Result<StateVector> {
    if !same_basis(&state.basis, &h.basis) {
        return Err(HilbertError::BasisMismatch);
    }
    Spectrum::new(h)?.evolve(state, duration)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn basis_dimensions() {
        let b = build_basis(&[Subsystem::atom(2), Subsystem::atom(2), Subsystem::mode(3)]).unwrap();
        assert_eq!(b.dimension(), 16);
        let b = build_basis(&[
            Subsystem::atom(4),
            Subsystem::atom(4),
            Subsystem::mode(2),
            Subsystem::mode(2),
        ])
        .unwrap();
        assert_eq!(b.dimension(), 144);
        assert_eq!(build_basis(&[Subsystem::atom(2)]).unwrap().dimension(), 2);
    }

    #[test]
    fn basis_errors_and_ordering() {
        assert_eq!(build_basis(&[]), Err(HilbertError::EmptyBasis));
        assert_eq!(
            build_basis(&[Subsystem::mode(0)]),
            Err(HilbertError::ZeroDimension { index: 0 })
        );
        assert_eq!(
            build_basis(&[Subsystem::atom(0)]),
            Err(HilbertError::ZeroDimension { index: 0 })
        );
        assert_eq!(
            build_basis(&[Subsystem::atom(5)]),
            Err(HilbertError::UnsupportedLevels(5))
        );
        let b = build_basis(&[Subsystem::mode(2), Subsystem::atom(3), Subsystem::atom(2)]).unwrap();
        assert_eq!(
            b.subsystems(),
            &[Subsystem::atom(3), Subsystem::atom(2), Subsystem::mode(2)]
        );
        for i in 0..b.dimension() {
            assert_eq!(b.index_of(&b.multi_index(i)).unwrap(), i);
        }
    }

    #[test]
    fn ladder_operator_action() {
        let b = build_basis(&[Subsystem::mode(3)]).unwrap();
        let a = annihilation(&b, 0).unwrap();
        let two = StateVector::basis_state(&b, &[2]).unwrap();
        let out = two.apply(&a).unwrap();
        assert!((out.amplitude(&[1]).unwrap() - c(2f64.sqrt())).norm() < 1e-15);
        assert!((out.norm() - 2f64.sqrt()).abs() < 1e-15);

        let vac = StateVector::basis_state(&b, &[0]).unwrap();
        assert_eq!(vac.apply(&a).unwrap().norm(), 0.0);

        let three = StateVector::basis_state(&b, &[3]).unwrap();
        let ad = creation(&b, 0).unwrap();
        assert_eq!(three.apply(&ad).unwrap().norm(), 0.0);
        let n = ad.mul(&a).unwrap();
        assert!((expectation(&three, &n).unwrap() - c(3.0)).norm() < 1e-14);
    }

    #[test]
    fn ladder_rejects_atom() {
        let b = build_basis(&[Subsystem::atom(2), Subsystem::mode(2)]).unwrap();
        assert_eq!(annihilation(&b, 0).unwrap_err(), HilbertError::NotAMode(0));
        assert_eq!(
            atomic_projector(&b, 1, 0, 0).unwrap_err(),
            HilbertError::NotAnAtom(1)
        );
    }

    #[test]
    fn projector_action() {
        let b = build_basis(&[Subsystem::atom(2)]).unwrap();
        let (g, e) = (0, 1);
        let ee = atomic_projector(&b, 0, e, e).unwrap();
        let sp = atomic_projector(&b, 0, e, g).unwrap();
        let sm = atomic_projector(&b, 0, g, e).unwrap();
        let ket_e = StateVector::basis_state(&b, &[e]).unwrap();
        let ket_g = StateVector::basis_state(&b, &[g]).unwrap();
        assert_eq!(ket_e.apply(&ee).unwrap(), ket_e);
        assert_eq!(ket_g.apply(&sp).unwrap(), ket_e);
        assert_eq!(ket_e.apply(&sp).unwrap().norm(), 0.0);
        assert_eq!(sp.adjoint().matrix(), sm.matrix());
        assert!(matches!(
            atomic_projector(&b, 0, 2, 0),
            Err(HilbertError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn quadrature_means() {
        let b = build_basis(&[Subsystem::mode(4)]).unwrap();
        let n = number(&b, 0).unwrap();
        let x = quadrature(&b, 0).unwrap();
        let vac = StateVector::basis_state(&b, &[0]).unwrap();
        assert_eq!(expectation(&vac, &n).unwrap(), c(0.0));
        for k in 0..=4 {
            let s = StateVector::basis_state(&b, &[k]).unwrap();
            assert!(expectation(&s, &x).unwrap().norm() < 1e-15);
        }
        let plus = StateVector::superposition(&b, &[(c(1.0), &[0]), (c(1.0), &[1])]).unwrap();
        assert!((expectation(&plus, &x).unwrap() - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let b = build_basis(&[Subsystem::atom(2), Subsystem::mode(2)]).unwrap();
        let s = StateVector::superposition(&b, &[(c(1.0), &[1, 0]), (C64::new(0.0, 1.0), &[0, 2])])
            .unwrap();
        let out = evolve(&s, &OperatorMatrix::zeros(&b), 3.7).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn evolve_rejects_bad_inputs() {
        let b = build_basis(&[Subsystem::mode(2)]).unwrap();
        let other = build_basis(&[Subsystem::mode(3)]).unwrap();
        let a = annihilation(&b, 0).unwrap();
        let s = StateVector::basis_state(&b, &[1]).unwrap();
        assert!(matches!(
            evolve(&s, &a, 1.0),
            Err(HilbertError::NotHermitian(_))
        ));
        let h = number(&other, 0).unwrap();
        assert_eq!(
            evolve(&s, &h, 1.0).unwrap_err(),
            HilbertError::BasisMismatch
        );
    }

    #[test]
    fn photon_projection() {
        let b = build_basis(&[Subsystem::atom(2), Subsystem::mode(5)]).unwrap();
        let s = StateVector::superposition(&b, &[(c(1.0), &[0, 3]), (c(-1.0), &[1, 3])]).unwrap();
        let p = project_photon_number(&s, 1, 3).unwrap();
        assert!((p.probability - 1.0).abs() < 1e-15);
        let post = p.state.unwrap();
        assert!((post.amplitudes() - s.amplitudes())
            .iter()
            .all(|z| z.norm() < 1e-15));
        let p = project_photon_number(&s, 1, 4).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.probability, 0.0);
    }

    #[test]
    fn replace_round_trip_and_entanglement() {
        let b = build_basis(&[Subsystem::atom(2), Subsystem::mode(5)]).unwrap();
        let s = StateVector::superposition(&b, &[(c(0.6), &[0, 0]), (C64::new(0.0, 0.8), &[1, 0])])
            .unwrap();
        let up = replace_mode_state(&s, 1, 4).unwrap();
        assert_eq!(
            up,
            StateVector::superposition(&b, &[(c(0.6), &[0, 4]), (C64::new(0.0, 0.8), &[1, 4])])
                .unwrap()
        );
        assert_eq!(replace_mode_state(&up, 1, 0).unwrap(), s);

        let bell = StateVector::superposition(&b, &[(c(1.0), &[0, 1]), (c(1.0), &[1, 0])]).unwrap();
        assert!(matches!(
            replace_mode_state(&bell, 1, 0),
            Err(HilbertError::Entangled { .. })
        ));
    }

    #[test]
    fn tensor_and_swap() {
        let atoms = build_basis(&[Subsystem::atom(2), Subsystem::atom(2)]).unwrap();
        let field = build_basis(&[Subsystem::mode(2)]).unwrap();
        let s =
            StateVector::superposition(&atoms, &[(c(1.0), &[1, 0]), (c(-1.0), &[0, 1])]).unwrap();
        let f = StateVector::basis_state(&field, &[2]).unwrap();
        let joint = s.tensor(&f).unwrap();
        assert_eq!(joint.basis().dimension(), 12);
        assert!((joint.amplitude(&[1, 0, 2]).unwrap() - c(0.5f64.sqrt())).norm() < 1e-15);
        let swapped = joint.swap_subsystems(0, 1).unwrap();
        assert_eq!(swapped, joint.clone().scaled(c(-1.0)));
    }
}
