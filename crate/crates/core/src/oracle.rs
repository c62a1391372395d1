//! Brute-force references used to check the fast paths: a Taylor
//! scaling-and-squaring matrix exponential, Born probabilities by direct
//! linear algebra, and trapezoidal quadrature of reshaping averages.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::dynamics::{effective_hamiltonian, Distribution, ReshapeComponent};
use crate::error::{Error, Result};
use crate::flo::{apply_gates, sequence_matrix, FloGate};
use crate::fock::{extract_pattern, is_occupied, OperatorMatrix, StateVector, C64, ZERO};

/// `e^A` by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = 0;
    while norm1 / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let scaled = a / C64::new(2f64.powi(s), 0.0);
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// `e^{−iHt}` computed without any eigendecomposition.
pub fn matexp_oracle(h: &OperatorMatrix, t: f64) -> Result<OperatorMatrix> {
    h.ensure_hermitian(1e-10)?;
    OperatorMatrix::from_entries(h.layout, expm(&(&h.entries * C64::new(0.0, -t))))
}

/// A single Born-rule query: prepare, evolve under `H` (or its analytic
/// average), rotate, and read one outcome on a set of modes.
#[derive(Clone, Debug)]
pub struct ProbabilityQuery {
    pub probe: StateVector,
    pub hamiltonian: OperatorMatrix,
    pub t: f64,
    /// When present, evolve under the exact average over this distribution.
    pub averaged_over: Option<Distribution>,
    pub measurement_rotation: Vec<FloGate>,
    pub outcome_modes: Vec<usize>,
    pub outcome: Vec<bool>,
}

pub fn exact_probability(q: &ProbabilityQuery) -> Result<f64> {
    if q.outcome.len() != q.outcome_modes.len() {
        return Err(Error::Validation("outcome bits and modes differ in length".into()));
    }
    for &m in &q.outcome_modes {
        q.probe.layout.check_mode(m)?;
    }
    let h = match &q.averaged_over {
        Some(d) => effective_hamiltonian(&q.hamiltonian, d)?,
        None => q.hamiltonian.clone(),
    };
    let u = matexp_oracle(&h, q.t)?;
    let evolved = u.apply(&q.probe);
    let out = apply_gates(&q.measurement_rotation, &evolved)?;
    let target = q
        .outcome
        .iter()
        .enumerate()
        .fold(0usize, |acc, (p, &b)| if b { acc | (1 << p) } else { acc });
    Ok(out
        .amplitudes
        .iter()
        .enumerate()
        .filter(|(b, _)| extract_pattern(*b, &q.outcome_modes) == target)
        .map(|(_, a)| a.norm_sqr())
        .sum())
}

/// Trapezoidal average of `U(θ)† H U(θ)` over `θ ∈ [0, 2π)`, one grid per
/// independent component. Number-phase components are averaged first, which
/// removes the half-integer frequencies the half-angle families would
/// otherwise leave non-periodic.
pub fn channel_average_oracle(h: &OperatorMatrix, dist: &Distribution, grid_points: usize) -> Result<OperatorMatrix> {
    if grid_points < 256 {
        return Err(Error::Validation(format!("quadrature needs at least 256 points, got {grid_points}")));
    }
    dist.validate(h.layout)?;
    let mut order: Vec<&ReshapeComponent> = dist.components.iter().collect();
    order.sort_by_key(|c| !matches!(c, ReshapeComponent::NumberPhase { .. }));
    let layout = h.layout;
    let mut m = h.entries.clone();
    for comp in order {
        let single = Distribution { components: vec![comp.clone()] };
        let mut acc = DMatrix::from_element(layout.dim(), layout.dim(), ZERO);
        match comp {
            ReshapeComponent::NumberPhase { modes } => {
                let count: Vec<f64> = (0..layout.dim())
                    .map(|b| modes.iter().filter(|&&k| is_occupied(b, k)).count() as f64)
                    .collect();
                for g in 0..grid_points {
                    let th = 2.0 * PI * g as f64 / grid_points as f64;
                    for a in 0..layout.dim() {
                        for c in 0..layout.dim() {
                            if m[(a, c)] != ZERO {
                                acc[(a, c)] += m[(a, c)] * C64::from_polar(1.0, th * (count[a] - count[c]));
                            }
                        }
                    }
                }
            }
            _ => {
                for g in 0..grid_points {
                    let th = 2.0 * PI * g as f64 / grid_points as f64;
                    let u = sequence_matrix(&single.unitary_gates(&[th]), layout)?.entries;
                    acc += u.adjoint() * &m * &u;
                }
            }
        }
        m = acc / C64::new(grid_points as f64, 0.0);
    }
    OperatorMatrix::from_entries(layout, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Propagator;
    use crate::flo::{prepare_probe, ProbeSpec, PREP_ANGLE};
    use crate::fock::{number_op, ModeLayout};
    use crate::model::{build_hamiltonian, random_model, HubbardModel, InteractionGraph, TwoSiteModel};

    fn single_site(w1: f64, w2: f64, xi: f64, anc: usize) -> (OperatorMatrix, ModeLayout) {
        let mut m = HubbardModel::zero(InteractionGraph::new(1, &[]).unwrap(), 1.0);
        m.chemical[0] = [w1, w2];
        m.onsite[0] = xi;
        let l = ModeLayout::for_sites(1, anc).unwrap();
        (build_hamiltonian(&m, l).unwrap(), l)
    }

    #[test]
    fn type0_vacuum_return_for_first_spin() {
        let (h, l) = single_site(0.7, 0.1, -0.3, 1);
        let q = ProbabilityQuery {
            probe: prepare_probe(&ProbeSpec::gaussian_pair(0, 2), l).unwrap(),
            hamiltonian: h,
            t: 1.0,
            averaged_over: None,
            measurement_rotation: vec![FloGate::v(0, 2, PREP_ANGLE).inverse()],
            outcome_modes: vec![0, 2],
            outcome: vec![false, false],
        };
        let p = exact_probability(&q).unwrap();
        assert!((p - 0.5 * (1.0 + 0.7f64.cos())).abs() < 1e-12);
        assert!((p - 0.882_421_1).abs() < 1e-7);
        let q0 = ProbabilityQuery { t: 0.0, ..q };
        assert!((exact_probability(&q0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pair_phase_probability() {
        let (h, l) = single_site(0.2, -0.3, 0.5, 0);
        let q = ProbabilityQuery {
            probe: prepare_probe(&ProbeSpec::gaussian_pair(0, 1), l).unwrap(),
            hamiltonian: h,
            t: 1.0,
            averaged_over: None,
            measurement_rotation: vec![FloGate::v(0, 1, PREP_ANGLE).inverse()],
            outcome_modes: vec![0, 1],
            outcome: vec![false, false],
        };
        assert!((exact_probability(&q).unwrap() - 0.5 * (1.0 + 0.4f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn oracle_agrees_with_eigen_path() {
        let l = ModeLayout::new(3, 0).unwrap();
        let m = random_model(&InteractionGraph::new(1, &[]).unwrap(), 4, 1.0);
        let _ = m;
        let raw = DMatrix::from_fn(8, 8, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 * 0.1, ((i + 2 * j) % 3) as f64 * 0.07));
        let h = OperatorMatrix::from_entries(l, (&raw + raw.adjoint()) * C64::new(0.5, 0.0)).unwrap();
        let a = matexp_oracle(&h, 0.7).unwrap();
        let b = Propagator::new(&h).unwrap().unitary(0.7);
        assert!(crate::fock::max_abs(&(a.entries - b)) <= 1e-11);
        assert!(matexp_oracle(&h, 0.0).unwrap().max_abs_diff(&OperatorMatrix::identity(l)) < 1e-15);
    }

    #[test]
    fn oracle_on_number_operators_gives_phases() {
        let l = ModeLayout::new(2, 0).unwrap();
        let h = number_op(l, 0).unwrap().plus(&number_op(l, 1).unwrap());
        let u = matexp_oracle(&h, 0.9).unwrap();
        for b in 0..4usize {
            let n = b.count_ones() as f64;
            assert!((u.entries[(b, b)] - C64::from_polar(1.0, -0.9 * n)).norm() < 1e-13);
        }
    }

    #[test]
    fn quadrature_matches_analytic_two_site() {
        let tm = TwoSiteModel::random(17, 1.0);
        let l = ModeLayout::for_sites(2, 0).unwrap();
        let h = build_hamiltonian(&tm.to_hubbard(1.0), l).unwrap();
        for d in [
            Distribution::site_pair_phase(&[0, 1]),
            Distribution::ux_half_angle(&[(0, 2), (1, 3)]),
            Distribution::uy_half_angle(&[(0, 2)]),
        ] {
            let quad = channel_average_oracle(&h, &d, 4096).unwrap();
            let exact = effective_hamiltonian(&h, &d).unwrap();
            assert!(quad.max_abs_diff(&exact) < 1e-10, "{d:?}");
            let coarse = channel_average_oracle(&h, &d, 2048).unwrap();
            assert!(quad.max_abs_diff(&coarse) < 1e-11);
        }
        let trivial = channel_average_oracle(&h, &Distribution::trivial(), 256).unwrap();
        assert!(trivial.max_abs_diff(&h) == 0.0);
    }
}
