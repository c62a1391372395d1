//! Fermionic linear optics gates and probe-state preparation.
//!
//! Every two-mode gate is the exponential of a quadratic generator built from
//! one ladder pair `T` (either `a†_i a_j` or `a†_i a†_j`):
//!
//! * Hermitian family `e^{iθ(T + T†)}` = `I + (cosθ − 1)P + i sinθ (T + T†)`
//! * anti-Hermitian family `e^{θ(T† − T)}` = `I + (cosθ − 1)P + sinθ (T† − T)`
//!
//! where `P = TT† + T†T` projects onto the two-level subspace `T` connects.
//! Gates are applied sparsely: each basis state inside `P` is rotated with
//! its partner, with the Jordan-Wigner sign of `T` read off the ladder
//! primitives in [`crate::fock`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

use crate::error::{Error, Result};
use crate::fock::{apply_ladder_string, is_occupied, ModeLayout, OperatorMatrix, StateVector, C64, ZERO};

/// Angle used for probe preparation: `V(−π/4)|Ω⟩ = (|Ω⟩ + a†_i a†_j|Ω⟩)/√2`.
pub const PREP_ANGLE: f64 = -FRAC_PI_4;
/// Angle of the pair rotations that define tilde modes.
pub const ROTATION_ANGLE: f64 = FRAC_PI_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    /// `e^{θ(a_j a_i − a†_i a†_j)}`: pair creation, real amplitudes.
    V,
    /// `e^{iθ(a†_i a†_j + a_j a_i)}`: pair creation, imaginary amplitudes.
    W,
    /// `e^{θ(a†_i a_j − a†_j a_i)}`: real beamsplitter.
    VPrime,
    /// `e^{iθ(a†_i a_j + a†_j a_i)}`: imaginary beamsplitter.
    WPrime,
    /// `e^{iθ(a†_i a_j + a†_j a_i)}`; conjugates `a_i` to `cosθ a_i − i sinθ a_j`.
    Ux,
    /// `e^{θ(a†_j a_i − a†_i a_j)}`; conjugates `a_i` to `cosθ a_i + sinθ a_j`.
    Uy,
    /// `e^{−iθ Σ_k n_k}` over the listed modes.
    NumberPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloGate {
    pub kind: GateKind,
    pub modes: Vec<usize>,
    pub theta: f64,
}

impl FloGate {
    pub fn new(kind: GateKind, modes: &[usize], theta: f64) -> Self {
        Self { kind, modes: modes.to_vec(), theta }
    }

    pub fn v(i: usize, j: usize, theta: f64) -> Self {
        Self::new(GateKind::V, &[i, j], theta)
    }

    pub fn w(i: usize, j: usize, theta: f64) -> Self {
        Self::new(GateKind::W, &[i, j], theta)
    }

    pub fn v_prime(i: usize, j: usize, theta: f64) -> Self {
        Self::new(GateKind::VPrime, &[i, j], theta)
    }

    pub fn w_prime(i: usize, j: usize, theta: f64) -> Self {
        Self::new(GateKind::WPrime, &[i, j], theta)
    }

    pub fn ux(i: usize, j: usize, theta: f64) -> Self {
        Self::new(GateKind::Ux, &[i, j], theta)
    }

    pub fn uy(i: usize, j: usize, theta: f64) -> Self {
        Self::new(GateKind::Uy, &[i, j], theta)
    }

    pub fn number_phase(modes: &[usize], theta: f64) -> Self {
        Self::new(GateKind::NumberPhase, modes, theta)
    }

    /// The inverse gate. Every family is a one-parameter group, so this is
    /// the same gate at `−θ`.
    pub fn inverse(&self) -> Self {
        Self { kind: self.kind, modes: self.modes.clone(), theta: -self.theta }
    }

    pub fn validate(&self, layout: ModeLayout) -> Result<()> {
        for &m in &self.modes {
            layout.check_mode(m)?;
        }
        match self.kind {
            GateKind::NumberPhase => {
                if self.modes.is_empty() {
                    return Err(Error::Validation("number phase needs at least one mode".into()));
                }
            }
            _ => {
                if self.modes.len() != 2 {
                    return Err(Error::Validation(format!(
                        "{:?} acts on exactly two modes, got {}",
                        self.kind,
                        self.modes.len()
                    )));
                }
                if self.modes[0] == self.modes[1] {
                    return Err(Error::Validation(format!(
                        "{:?} needs distinct modes, got {} twice",
                        self.kind, self.modes[0]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ladder pair `T` and how the gate exponentiates it.
enum Shape {
    /// `e^{iθ(T + T†)}`
    Hermitian,
    /// `e^{θ(T† − T)}`
    AntiHermitian,
}

/// `(shape, T is pair creation, effective θ)`.
fn decompose(kind: GateKind, theta: f64) -> (Shape, bool, f64) {
    match kind {
        GateKind::V => (Shape::AntiHermitian, true, theta),
        GateKind::W => (Shape::Hermitian, true, theta),
        GateKind::VPrime => (Shape::AntiHermitian, false, -theta),
        GateKind::WPrime | GateKind::Ux => (Shape::Hermitian, false, theta),
        GateKind::Uy => (Shape::AntiHermitian, false, theta),
        GateKind::NumberPhase => unreachable!("number phase has no ladder pair"),
    }
}

/// Apply a gate in place to the columns of a matrix whose rows index Fock
/// basis states (one column for a state vector).
fn apply_gate_rows(gate: &FloGate, m: &mut DMatrix<C64>) {
    let dim = m.nrows();
    if gate.kind == GateKind::NumberPhase {
        for b in 0..dim {
            let n = gate.modes.iter().filter(|&&k| is_occupied(b, k)).count();
            if n > 0 {
                let ph = C64::from_polar(1.0, -gate.theta * n as f64);
                for c in 0..m.ncols() {
                    m[(b, c)] *= ph;
                }
            }
        }
        return;
    }
    let (i, j) = (gate.modes[0], gate.modes[1]);
    let (shape, pair, theta) = decompose(gate.kind, gate.theta);
    let (sn, cs) = theta.sin_cos();
    let t_ops = [(i, true), (j, pair)];
    for lo in 0..dim {
        // `lo` is the state T raises: both empty (pair) or only j filled (hopping).
        let oi = is_occupied(lo, i);
        let oj = is_occupied(lo, j);
        let is_lo = if pair { !oi && !oj } else { !oi && oj };
        if !is_lo {
            continue;
        }
        let (s, hi) = apply_ladder_string(lo, &t_ops).expect("T acts on its lower state");
        for c in 0..m.ncols() {
            let xl = m[(lo, c)];
            let xh = m[(hi, c)];
            let (nl, nh) = match shape {
                Shape::Hermitian => {
                    let is = C64::new(0.0, sn * s);
                    (xl * cs + is * xh, xh * cs + is * xl)
                }
                Shape::AntiHermitian => (xl * cs + xh * (sn * s), xh * cs - xl * (sn * s)),
            };
            m[(lo, c)] = nl;
            m[(hi, c)] = nh;
        }
    }
}

/// Apply `gate` to a state (sparse path).
pub fn apply_gate(gate: &FloGate, state: &StateVector) -> Result<StateVector> {
    gate.validate(state.layout)?;
    let mut m = DMatrix::from_column_slice(state.dim(), 1, state.amplitudes.as_slice());
    apply_gate_rows(gate, &mut m);
    Ok(StateVector {
        layout: state.layout,
        amplitudes: m.column(0).into_owned(),
    })
}

/// Apply gates left to right in list order (first gate acts first).
pub fn apply_gates(gates: &[FloGate], state: &StateVector) -> Result<StateVector> {
    let mut s = state.clone();
    for g in gates {
        s = apply_gate(g, &s)?;
    }
    Ok(s)
}

/// In-place `G·M` for a dense matrix on the layout (used for density matrices).
pub fn left_multiply(gate: &FloGate, layout: ModeLayout, m: &mut DMatrix<C64>) -> Result<()> {
    gate.validate(layout)?;
    apply_gate_rows(gate, m);
    Ok(())
}

/// In-place `G ρ G†`.
pub fn conjugate_density(gate: &FloGate, layout: ModeLayout, rho: &mut DMatrix<C64>) -> Result<()> {
    gate.validate(layout)?;
    apply_gate_rows(gate, rho);
    // (G (G ρ)†)† = G ρ G†
    let mut t = rho.adjoint();
    apply_gate_rows(gate, &mut t);
    *rho = t.adjoint();
    Ok(())
}

/// Dense unitary of a gate.
pub fn gate_matrix(gate: &FloGate, layout: ModeLayout) -> Result<OperatorMatrix> {
    gate.validate(layout)?;
    let mut m = DMatrix::<C64>::identity(layout.dim(), layout.dim());
    apply_gate_rows(gate, &mut m);
    OperatorMatrix::from_entries(layout, m)
}

/// Product of gates as one matrix, first listed gate acting first.
pub fn sequence_matrix(gates: &[FloGate], layout: ModeLayout) -> Result<OperatorMatrix> {
    let mut m = DMatrix::<C64>::identity(layout.dim(), layout.dim());
    for g in gates {
        g.validate(layout)?;
        apply_gate_rows(g, &mut m);
    }
    OperatorMatrix::from_entries(layout, m)
}

/// Hermitian or anti-Hermitian generator `K` with `gate = e^{K}`, for
/// cross-checking closed forms against dense exponentiation.
pub fn gate_generator(gate: &FloGate, layout: ModeLayout) -> Result<OperatorMatrix> {
    use crate::fock::{creation_op, number_op};
    gate.validate(layout)?;
    if gate.kind == GateKind::NumberPhase {
        let mut k = OperatorMatrix::zeros(layout);
        for &m in &gate.modes {
            k = k.plus(&number_op(layout, m)?);
        }
        return Ok(k.scale(C64::new(0.0, -gate.theta)));
    }
    let (i, j) = (gate.modes[0], gate.modes[1]);
    let (shape, pair, theta) = decompose(gate.kind, gate.theta);
    let ci = creation_op(layout, i)?;
    let t = if pair {
        ci.matmul(&creation_op(layout, j)?)
    } else {
        ci.matmul(&creation_op(layout, j)?.dagger())
    };
    Ok(match shape {
        Shape::Hermitian => t.plus(&t.dagger()).scale(C64::new(0.0, theta)),
        Shape::AntiHermitian => t.dagger().minus(&t).scale(C64::new(theta, 0.0)),
    })
}

/// How a probe state is built from the vacuum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbeKind {
    /// `V(−π/4)` on `(i, j)` applied to `|Ω⟩`.
    GaussianPair { i: usize, j: usize },
    /// `V'(−π/4)` on `(i, j)` applied to `a†_i|Ω⟩`.
    OddSingle { i: usize, j: usize },
}

/// A probe: base preparation followed by pair rotations (empty for the
/// unrotated probes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub rotations: Vec<FloGate>,
}

impl ProbeSpec {
    pub fn gaussian_pair(i: usize, j: usize) -> Self {
        Self { kind: ProbeKind::GaussianPair { i, j }, rotations: Vec::new() }
    }

    pub fn odd_single(i: usize, j: usize) -> Self {
        Self { kind: ProbeKind::OddSingle { i, j }, rotations: Vec::new() }
    }

    pub fn rotated(mut self, rotations: Vec<FloGate>) -> Self {
        self.rotations = rotations;
        self
    }

    /// Modes occupied before any gate is applied.
    pub fn initial_occupation(&self) -> Vec<usize> {
        match self.kind {
            ProbeKind::GaussianPair { .. } => Vec::new(),
            ProbeKind::OddSingle { i, .. } => vec![i],
        }
    }

    /// All gates of the preparation, in application order.
    pub fn gates(&self) -> Vec<FloGate> {
        let mut g = match self.kind {
            ProbeKind::GaussianPair { i, j } => vec![FloGate::v(i, j, PREP_ANGLE)],
            ProbeKind::OddSingle { i, j } => vec![FloGate::v_prime(i, j, PREP_ANGLE)],
        };
        g.extend(self.rotations.iter().cloned());
        g
    }

    pub fn modes(&self) -> Vec<usize> {
        let (i, j) = match self.kind {
            ProbeKind::GaussianPair { i, j } | ProbeKind::OddSingle { i, j } => (i, j),
        };
        let mut m = vec![i, j];
        for r in &self.rotations {
            for &k in &r.modes {
                if !m.contains(&k) {
                    m.push(k);
                }
            }
        }
        m
    }
}

/// Basis index with the listed modes occupied.
pub fn occupation_index(modes: &[usize]) -> usize {
    modes.iter().fold(0, |acc, &m| acc | (1 << m))
}

/// Build the probe on the given layout. Several probes on disjoint modes are
/// combined with [`prepare_joint_probe`].
pub fn prepare_probe(probe: &ProbeSpec, layout: ModeLayout) -> Result<StateVector> {
    prepare_joint_probe(std::slice::from_ref(probe), layout)
}

/// Product state of several probes on disjoint mode sets.
///
/// The initial occupations are created in ascending mode order, so the basis
/// amplitude is +1; the gates are then applied probe by probe.
pub fn prepare_joint_probe(probes: &[ProbeSpec], layout: ModeLayout) -> Result<StateVector> {
    let mut occupied: Vec<usize> = probes.iter().flat_map(|p| p.initial_occupation()).collect();
    occupied.sort_unstable();
    for &m in &occupied {
        layout.check_mode(m)?;
    }
    let mut state = StateVector::basis(layout, occupation_index(&occupied));
    for p in probes {
        let (i, j) = match p.kind {
            ProbeKind::GaussianPair { i, j } | ProbeKind::OddSingle { i, j } => (i, j),
        };
        if i == j {
            return Err(Error::Validation(format!("probe modes must differ, got {i} twice")));
        }
        state = apply_gates(&p.gates(), &state)?;
    }
    Ok(state)
}

/// `max |e^{iθ ñ_1} − e^{iθ(n_1+n_3)/2} U_x(θ/2)|` on four modes, where the
/// tilde mode is `ã_1 = U_y(π/4) a_1 U_y(π/4)†` on the pair (1, 3).
pub fn ux_uy_number_identity_check(theta: f64) -> Result<f64> {
    use crate::oracle::expm;
    let layout = ModeLayout::new(4, 0)?;
    let (m1, m3) = (0, 2);
    let r = gate_matrix(&FloGate::uy(m1, m3, ROTATION_ANGLE), layout)?;
    let n1 = crate::fock::number_op(layout, m1)?;
    let n1_tilde = r.matmul(&n1).matmul(&r.dagger());
    let lhs = expm(&(&n1_tilde.entries * C64::new(0.0, theta)));
    let phase = gate_matrix(&FloGate::number_phase(&[m1, m3], -theta / 2.0), layout)?;
    let ux = gate_matrix(&FloGate::ux(m1, m3, theta / 2.0), layout)?;
    let rhs = phase.matmul(&ux);
    Ok(crate::fock::max_abs(&(lhs - rhs.entries)))
}

/// `(U a_i U†, U a_j U†)` expressed in the `(a_i, a_j)` basis: the 2×2
/// matrix `C` with `U a U† = C a`, recovered by Hilbert-Schmidt projection.
pub fn conjugation_table(gate: &FloGate, layout: ModeLayout) -> Result<[[C64; 2]; 2]> {
    use crate::fock::annihilation_op;
    let u = gate_matrix(gate, layout)?;
    let (i, j) = (gate.modes[0], gate.modes[1]);
    let a = [annihilation_op(layout, i)?, annihilation_op(layout, j)?];
    let norm = (layout.dim() / 2) as f64;
    let mut table = [[ZERO; 2]; 2];
    for r in 0..2 {
        let conj = u.matmul(&a[r]).matmul(&u.dagger());
        for c in 0..2 {
            let overlap = (a[c].entries.adjoint() * &conj.entries).trace();
            table[r][c] = overlap / norm;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{parity_of, vacuum, Parity, ONE};
    use crate::oracle::expm;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn all_kinds() -> [GateKind; 6] {
        [GateKind::V, GateKind::W, GateKind::VPrime, GateKind::WPrime, GateKind::Ux, GateKind::Uy]
    }

    #[test]
    fn v_prepares_equal_superposition() {
        let l = ModeLayout::new(2, 1).unwrap();
        let s = apply_gate(&FloGate::v(0, 2, PREP_ANGLE), &vacuum(l)).unwrap();
        let pair = vacuum(l).create(2).unwrap().create(0).unwrap();
        let expect = (vacuum(l).amplitudes + pair.amplitudes) * C64::new(FRAC_1_SQRT_2, 0.0);
        assert!((s.amplitudes - expect).norm() < 1e-15);
        let s = apply_gate(&FloGate::w(0, 2, PREP_ANGLE), &vacuum(l)).unwrap();
        let pair = vacuum(l).create(2).unwrap().create(0).unwrap();
        let expect = (vacuum(l).amplitudes - pair.amplitudes * C64::i()) * C64::new(FRAC_1_SQRT_2, 0.0);
        assert!((s.amplitudes - expect).norm() < 1e-15);
    }

    #[test]
    fn v_prime_splits_single_particle() {
        let l = ModeLayout::new(2, 0).unwrap();
        let one = vacuum(l).create(0).unwrap();
        let s = apply_gate(&FloGate::v_prime(0, 1, PREP_ANGLE), &one).unwrap();
        let expect = (one.amplitudes.clone() + vacuum(l).create(1).unwrap().amplitudes)
            * C64::new(FRAC_1_SQRT_2, 0.0);
        assert!((s.amplitudes - expect).norm() < 1e-15);
        let s = apply_gate(&FloGate::w_prime(0, 1, PREP_ANGLE), &one).unwrap();
        let expect = (one.amplitudes - vacuum(l).create(1).unwrap().amplitudes * C64::i())
            * C64::new(FRAC_1_SQRT_2, 0.0);
        assert!((s.amplitudes - expect).norm() < 1e-15);
    }

    #[test]
    fn zero_angle_is_identity() {
        let l = ModeLayout::new(3, 0).unwrap();
        for k in all_kinds() {
            let g = gate_matrix(&FloGate::new(k, &[0, 2], 0.0), l).unwrap();
            assert!(g.max_abs_diff(&OperatorMatrix::identity(l)) == 0.0);
        }
    }

    #[test]
    fn closed_form_matches_dense_exponential() {
        let l = ModeLayout::new(4, 0).unwrap();
        for k in all_kinds() {
            for &(i, j) in &[(0, 2), (3, 1), (1, 2)] {
                for &th in &[0.3, -1.1, 2.5] {
                    let g = FloGate::new(k, &[i, j], th);
                    let closed = gate_matrix(&g, l).unwrap();
                    let dense = expm(&gate_generator(&g, l).unwrap().entries);
                    assert!(crate::fock::max_abs(&(closed.entries - dense)) < 1e-12, "{k:?} {i} {j}");
                }
            }
        }
        let g = FloGate::number_phase(&[0, 3], 0.7);
        let dense = expm(&gate_generator(&g, l).unwrap().entries);
        assert!(crate::fock::max_abs(&(gate_matrix(&g, l).unwrap().entries - dense)) < 1e-12);
    }

    #[test]
    fn printed_closed_form_of_ux_holds() {
        use crate::fock::{creation_op, number_op};
        let l = ModeLayout::new(4, 0).unwrap();
        let th: f64 = 0.83;
        let n1 = number_op(l, 0).unwrap();
        let n3 = number_op(l, 2).unwrap();
        let d = n1.minus(&n3);
        let d2 = d.matmul(&d);
        let c1 = creation_op(l, 0).unwrap();
        let c3 = creation_op(l, 2).unwrap();
        let x = c1.matmul(&c3.dagger()).plus(&c3.matmul(&c1.dagger()));
        let closed = OperatorMatrix::identity(l)
            .plus(&d2.scale(C64::new(th.cos() - 1.0, 0.0)))
            .plus(&x.scale(C64::new(0.0, th.sin())));
        let g = gate_matrix(&FloGate::ux(0, 2, th), l).unwrap();
        assert!(g.max_abs_diff(&closed) < 1e-13);
    }

    #[test]
    fn conjugation_tables() {
        let l = ModeLayout::new(4, 0).unwrap();
        let th: f64 = 0.61;
        let (s, c) = th.sin_cos();
        let t = conjugation_table(&FloGate::ux(0, 2, th), l).unwrap();
        let expect = [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]];
        for r in 0..2 {
            for k in 0..2 {
                assert!((t[r][k] - expect[r][k]).norm() < 1e-12);
            }
        }
        let t = conjugation_table(&FloGate::uy(0, 2, th), l).unwrap();
        let expect = [[C64::new(c, 0.0), C64::new(s, 0.0)], [C64::new(-s, 0.0), C64::new(c, 0.0)]];
        for r in 0..2 {
            for k in 0..2 {
                assert!((t[r][k] - expect[r][k]).norm() < 1e-12);
            }
        }
        let t = conjugation_table(&FloGate::uy(0, 2, ROTATION_ANGLE), l).unwrap();
        assert!((t[0][0] - ONE * FRAC_1_SQRT_2).norm() < 1e-12);
        assert!((t[0][1] - ONE * FRAC_1_SQRT_2).norm() < 1e-12);
        assert!((t[1][0] + ONE * FRAC_1_SQRT_2).norm() < 1e-12);
        assert!((t[1][1] - ONE * FRAC_1_SQRT_2).norm() < 1e-12);
    }

    #[test]
    fn probes_have_definite_parity() {
        let l = ModeLayout::new(4, 1).unwrap();
        let g = prepare_probe(&ProbeSpec::gaussian_pair(0, 4), l).unwrap();
        assert_eq!(parity_of(&g), Parity::Even);
        let o = prepare_probe(&ProbeSpec::odd_single(0, 1), l).unwrap();
        assert_eq!(parity_of(&o), Parity::Odd);
        let r = prepare_probe(
            &ProbeSpec::odd_single(0, 1).rotated(vec![FloGate::uy(0, 2, ROTATION_ANGLE), FloGate::uy(1, 3, ROTATION_ANGLE)]),
            l,
        )
        .unwrap();
        assert_eq!(parity_of(&r), Parity::Odd);
        assert!((r.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_gaussian_matches_tilde_creation() {
        // U_y(π/4) V(−π/4)|Ω⟩ = (|Ω⟩ + ã†_1 b†|Ω⟩)/√2 with ã†_1 = R a†_1 R†.
        use crate::fock::creation_op;
        let l = ModeLayout::new(4, 1).unwrap();
        let rot = FloGate::uy(0, 2, ROTATION_ANGLE);
        let probe = prepare_probe(&ProbeSpec::gaussian_pair(0, 4).rotated(vec![rot.clone()]), l).unwrap();
        let r = gate_matrix(&rot, l).unwrap();
        let a1t = r.matmul(&creation_op(l, 0).unwrap()).matmul(&r.dagger());
        let bt = creation_op(l, 4).unwrap();
        let v = vacuum(l);
        let pair = a1t.matmul(&bt).apply(&v);
        let expect = (v.amplitudes + pair.amplitudes) * C64::new(FRAC_1_SQRT_2, 0.0);
        assert!((probe.amplitudes - expect).norm() < 1e-13);
    }

    #[test]
    fn number_identity() {
        assert!(ux_uy_number_identity_check(0.0).unwrap() <= 1e-12);
        assert!(ux_uy_number_identity_check(PI / 3.0).unwrap() <= 1e-12);
        assert!(ux_uy_number_identity_check(2.0 * PI).unwrap() <= 1e-12);
    }

    #[test]
    fn repeated_modes_rejected() {
        let l = ModeLayout::new(2, 0).unwrap();
        assert!(matches!(gate_matrix(&FloGate::v(1, 1, 0.3), l), Err(Error::Validation(_))));
        assert!(gate_matrix(&FloGate::ux(0, 5, 0.3), l).is_err());
    }
}
