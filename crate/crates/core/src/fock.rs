//! Fermionic Fock space with a fixed mode ordering.
//!
//! Modes are encoded with the Jordan-Wigner transformation: basis index bit
//! `k` is the occupation of mode `k`, and `a_k` carries a parity string over
//! all modes of lower index. System modes come first (site `i`, spin `s` maps
//! to mode `2i + s`), ancilla modes follow. Because ancillae sit above every
//! system mode, operators on system modes never see ancilla occupations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest number of modes a layout may hold (dimension 2^14 = 16384).
pub const DEFAULT_MODE_CAP: usize = 14;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

const PARITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub const BOTH: [Spin; 2] = [Spin::Up, Spin::Down];

    pub fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn arrow(self) -> &'static str {
        match self {
            Spin::Up => "up",
            Spin::Down => "dn",
        }
    }
}

/// Mode bookkeeping: `n_system_modes` system modes followed by ancillae.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeLayout {
    n_system_modes: usize,
    n_ancilla_modes: usize,
}

impl ModeLayout {
    pub fn new(n_system_modes: usize, n_ancilla_modes: usize) -> Result<Self> {
        Self::with_cap(n_system_modes, n_ancilla_modes, DEFAULT_MODE_CAP)
    }

    pub fn with_cap(n_system_modes: usize, n_ancilla_modes: usize, cap: usize) -> Result<Self> {
        let requested = n_system_modes + n_ancilla_modes;
        if requested > cap {
            return Err(Error::ModeCapExceeded { requested, cap });
        }
        Ok(Self {
            n_system_modes,
            n_ancilla_modes,
        })
    }

    /// Two spin modes per site plus `n_ancilla_modes` ancillae.
    pub fn for_sites(n_sites: usize, n_ancilla_modes: usize) -> Result<Self> {
        Self::new(2 * n_sites, n_ancilla_modes)
    }

    pub fn n_system_modes(&self) -> usize {
        self.n_system_modes
    }

    pub fn n_ancilla_modes(&self) -> usize {
        self.n_ancilla_modes
    }

    pub fn n_modes(&self) -> usize {
        self.n_system_modes + self.n_ancilla_modes
    }

    pub fn dim(&self) -> usize {
        1 << self.n_modes()
    }

    pub fn system_dim(&self) -> usize {
        1 << self.n_system_modes
    }

    /// The same system modes with every ancilla removed.
    pub fn system_only(&self) -> ModeLayout {
        ModeLayout {
            n_system_modes: self.n_system_modes,
            n_ancilla_modes: 0,
        }
    }

    pub fn site_mode(&self, site: usize, spin: Spin) -> Result<usize> {
        let mode = 2 * site + spin.index();
        if mode >= self.n_system_modes {
            return Err(Error::ModeOutOfRange {
                mode,
                n_modes: self.n_system_modes,
            });
        }
        Ok(mode)
    }

    pub fn ancilla_mode(&self, k: usize) -> Result<usize> {
        if k >= self.n_ancilla_modes {
            return Err(Error::ModeOutOfRange {
                mode: self.n_system_modes + k,
                n_modes: self.n_modes(),
            });
        }
        Ok(self.n_system_modes + k)
    }

    pub fn is_ancilla(&self, mode: usize) -> bool {
        mode >= self.n_system_modes && mode < self.n_modes()
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes() {
            return Err(Error::ModeOutOfRange {
                mode,
                n_modes: self.n_modes(),
            });
        }
        Ok(())
    }
}

/// Sign picked up by the parity string of `mode` on basis state `basis`.
#[inline]
pub fn jw_sign(basis: usize, mode: usize) -> f64 {
    let below = basis & ((1usize << mode) - 1);
    if below.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
pub fn is_occupied(basis: usize, mode: usize) -> bool {
    basis & (1 << mode) != 0
}

/// `a†_mode |basis⟩ = sign |out⟩`, or `None` when the mode is already filled.
#[inline]
pub fn apply_creation(basis: usize, mode: usize) -> Option<(f64, usize)> {
    if is_occupied(basis, mode) {
        None
    } else {
        Some((jw_sign(basis, mode), basis | (1 << mode)))
    }
}

/// `a_mode |basis⟩ = sign |out⟩`, or `None` when the mode is empty.
#[inline]
pub fn apply_annihilation(basis: usize, mode: usize) -> Option<(f64, usize)> {
    if is_occupied(basis, mode) {
        Some((jw_sign(basis, mode), basis & !(1 << mode)))
    } else {
        None
    }
}

/// Apply a product of ladder operators, rightmost first. Each entry is
/// `(mode, is_creation)`.
pub fn apply_ladder_string(basis: usize, ops: &[(usize, bool)]) -> Option<(f64, usize)> {
    let mut sign = 1.0;
    let mut state = basis;
    for &(mode, create) in ops.iter().rev() {
        let (s, next) = if create {
            apply_creation(state, mode)?
        } else {
            apply_annihilation(state, mode)?
        };
        sign *= s;
        state = next;
    }
    Some((sign, state))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

impl Parity {
    pub fn sign(self) -> Option<i8> {
        match self {
            Parity::Even => Some(1),
            Parity::Odd => Some(-1),
            Parity::Mixed => None,
        }
    }

    pub fn is_definite(self) -> bool {
        !matches!(self, Parity::Mixed)
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parity::Even => write!(f, "+1"),
            Parity::Odd => write!(f, "-1"),
            Parity::Mixed => write!(f, "mixed"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub layout: ModeLayout,
    pub amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn from_amplitudes(layout: ModeLayout, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != layout.dim() {
            return Err(Error::Validation(format!(
                "amplitude vector has length {}, layout needs {}",
                amplitudes.len(),
                layout.dim()
            )));
        }
        Ok(Self { layout, amplitudes })
    }

    pub fn basis(layout: ModeLayout, index: usize) -> Self {
        let mut amplitudes = DVector::from_element(layout.dim(), ZERO);
        amplitudes[index] = ONE;
        Self { layout, amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.unscale_mut(n);
        }
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// `a†_mode` applied in place (sparse path).
    pub fn create(&self, mode: usize) -> Result<StateVector> {
        self.layout.check_mode(mode)?;
        let mut out = DVector::from_element(self.dim(), ZERO);
        for (b, &amp) in self.amplitudes.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            if let Some((s, nb)) = apply_creation(b, mode) {
                out[nb] += amp * s;
            }
        }
        Ok(StateVector {
            layout: self.layout,
            amplitudes: out,
        })
    }

    pub fn annihilate(&self, mode: usize) -> Result<StateVector> {
        self.layout.check_mode(mode)?;
        let mut out = DVector::from_element(self.dim(), ZERO);
        for (b, &amp) in self.amplitudes.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            if let Some((s, nb)) = apply_annihilation(b, mode) {
                out[nb] += amp * s;
            }
        }
        Ok(StateVector {
            layout: self.layout,
            amplitudes: out,
        })
    }

    /// Squared norm carried by odd-occupation basis states.
    pub fn odd_weight(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(b, _)| b.count_ones() % 2 == 1)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }
}

pub fn vacuum(layout: ModeLayout) -> StateVector {
    StateVector::basis(layout, 0)
}

/// Total-parity eigenvalue of a normalized state, or `Mixed` when the state
/// straddles both sectors by more than 1e-10 in norm.
pub fn parity_of(state: &StateVector) -> Parity {
    let (mut even, mut odd) = (0.0, 0.0);
    for (b, a) in state.amplitudes.iter().enumerate() {
        if b.count_ones() % 2 == 1 {
            odd += a.norm_sqr();
        } else {
            even += a.norm_sqr();
        }
    }
    if odd.sqrt() <= PARITY_TOL {
        Parity::Even
    } else if even.sqrt() <= PARITY_TOL {
        Parity::Odd
    } else {
        Parity::Mixed
    }
}

/// Marginal occupation distribution over a list of modes.
///
/// Outcome index bit `p` is the occupation of `modes[p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationDistribution {
    pub modes: Vec<usize>,
    pub probs: Vec<f64>,
}

impl OccupationDistribution {
    pub fn outcome_index(bits: &[bool]) -> usize {
        bits.iter()
            .enumerate()
            .fold(0, |acc, (p, &b)| if b { acc | (1 << p) } else { acc })
    }

    pub fn probability(&self, bits: &[bool]) -> f64 {
        self.probs[Self::outcome_index(bits)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Pattern of the listed modes inside basis state `basis`.
#[inline]
pub fn extract_pattern(basis: usize, modes: &[usize]) -> usize {
    modes
        .iter()
        .enumerate()
        .fold(0, |acc, (p, &m)| if is_occupied(basis, m) { acc | (1 << p) } else { acc })
}

pub fn occupation_probabilities(state: &StateVector, modes: &[usize]) -> Result<OccupationDistribution> {
    marginal_from_weights(
        state.layout,
        state.amplitudes.iter().map(|a| a.norm_sqr()),
        modes,
    )
}

/// Marginalize basis-state weights (e.g. a density-matrix diagonal) onto `modes`.
pub fn marginal_from_weights<I>(layout: ModeLayout, weights: I, modes: &[usize]) -> Result<OccupationDistribution>
where
    I: IntoIterator<Item = f64>,
{
    if modes.is_empty() {
        return Err(Error::Validation("occupation query needs at least one mode".into()));
    }
    for &m in modes {
        layout.check_mode(m)?;
    }
    let mut probs = vec![0.0; 1 << modes.len()];
    for (b, w) in weights.into_iter().enumerate() {
        probs[extract_pattern(b, modes)] += w;
    }
    Ok(OccupationDistribution {
        modes: modes.to_vec(),
        probs,
    })
}

/// Dense complex operator on a layout's Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub layout: ModeLayout,
    pub entries: DMatrix<C64>,
}

impl OperatorMatrix {
    pub fn zeros(layout: ModeLayout) -> Self {
        let d = layout.dim();
        Self {
            layout,
            entries: DMatrix::from_element(d, d, ZERO),
        }
    }

    pub fn identity(layout: ModeLayout) -> Self {
        let d = layout.dim();
        Self {
            layout,
            entries: DMatrix::identity(d, d),
        }
    }

    pub fn from_entries(layout: ModeLayout, entries: DMatrix<C64>) -> Result<Self> {
        let d = layout.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::Validation(format!(
                "operator is {}x{}, layout needs {d}x{d}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { layout, entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self {
            layout: self.layout,
            entries: self.entries.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            layout: self.layout,
            entries: &self.entries * c,
        }
    }

    pub fn matmul(&self, rhs: &OperatorMatrix) -> Self {
        Self {
            layout: self.layout,
            entries: &self.entries * &rhs.entries,
        }
    }

    pub fn plus(&self, rhs: &OperatorMatrix) -> Self {
        Self {
            layout: self.layout,
            entries: &self.entries + &rhs.entries,
        }
    }

    pub fn minus(&self, rhs: &OperatorMatrix) -> Self {
        Self {
            layout: self.layout,
            entries: &self.entries - &rhs.entries,
        }
    }

    pub fn anticommutator(&self, rhs: &OperatorMatrix) -> Self {
        Self {
            layout: self.layout,
            entries: &self.entries * &rhs.entries + &rhs.entries * &self.entries,
        }
    }

    pub fn commutator(&self, rhs: &OperatorMatrix) -> Self {
        Self {
            layout: self.layout,
            entries: &self.entries * &rhs.entries - &rhs.entries * &self.entries,
        }
    }

    pub fn apply(&self, state: &StateVector) -> StateVector {
        StateVector {
            layout: state.layout,
            amplitudes: &self.entries * &state.amplitudes,
        }
    }

    /// Largest elementwise modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }

    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        max_abs(&(&self.entries - &other.entries))
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_abs(&(&self.entries - self.entries.adjoint()))
    }

    pub fn unitarity_deviation(&self) -> f64 {
        let d = self.dim();
        max_abs(&(self.entries.adjoint() * &self.entries - DMatrix::<C64>::identity(d, d)))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn ensure_hermitian(&self, tol: f64) -> Result<()> {
        let deviation = self.hermitian_deviation();
        if deviation > tol {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(())
    }
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `a†_mode` as a dense matrix.
pub fn creation_op(layout: ModeLayout, mode: usize) -> Result<OperatorMatrix> {
    layout.check_mode(mode)?;
    let mut op = OperatorMatrix::zeros(layout);
    for b in 0..layout.dim() {
        if let Some((s, nb)) = apply_creation(b, mode) {
            op.entries[(nb, b)] = C64::new(s, 0.0);
        }
    }
    Ok(op)
}

pub fn annihilation_op(layout: ModeLayout, mode: usize) -> Result<OperatorMatrix> {
    Ok(creation_op(layout, mode)?.dagger())
}

/// `n_mode`, built directly as a diagonal.
pub fn number_op(layout: ModeLayout, mode: usize) -> Result<OperatorMatrix> {
    layout.check_mode(mode)?;
    let mut op = OperatorMatrix::zeros(layout);
    for b in 0..layout.dim() {
        if is_occupied(b, mode) {
            op.entries[(b, b)] = ONE;
        }
    }
    Ok(op)
}

pub fn total_number_op(layout: ModeLayout, modes: &[usize]) -> Result<OperatorMatrix> {
    let mut op = OperatorMatrix::zeros(layout);
    for &m in modes {
        layout.check_mode(m)?;
    }
    for b in 0..layout.dim() {
        let n = modes.iter().filter(|&&m| is_occupied(b, m)).count();
        op.entries[(b, b)] = C64::new(n as f64, 0.0);
    }
    Ok(op)
}

/// `(-1)^(Σ n_k)` over every mode of the layout.
pub fn parity_op(layout: ModeLayout) -> OperatorMatrix {
    let mut op = OperatorMatrix::zeros(layout);
    for b in 0..layout.dim() {
        op.entries[(b, b)] = C64::new(if b.count_ones() % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
    }
    op
}
