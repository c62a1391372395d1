//! Exact and randomly reshaped time evolution.
//!
//! A reshaping distribution is a list of independent components, each driven
//! by its own angle `θ ~ U[0, 2π)`. Every component is diagonal in a common
//! frame `R` (identity, or `π/4` pair rotations): the sampled unitary is
//! `U(θ) = R e^{−iθQ} R†` with `Q` diagonal in the occupation basis. One
//! reshaped step is `U† e^{−iHτ} U`.
//!
//! Averaging a step over `θ` multiplies matrix element `(a, c)` by
//! `w(q_a − q_c)` where `w(x) = E[e^{iθx}]`. The same fact gives the exact
//! averaged channel `Φ` of one step, and the expected output of the whole
//! `r`-step sequence is `Φ^r` applied to the input density matrix. Because
//! the outcome of a single shot marginalized over its random angles is a
//! Bernoulli draw from that averaged state, computing `Φ^r` exactly is
//! equivalent to simulating every shot with its own angles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::flo::{conjugate_density, FloGate, ROTATION_ANGLE};
use crate::fock::{is_occupied, ModeLayout, OperatorMatrix, StateVector, C64, ONE, ZERO};

const HERMITIAN_TOL: f64 = 1e-10;

/// One independently sampled factor of a reshaping unitary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReshapeComponent {
    /// `U = e^{−iθ Σ_k n_k}`.
    NumberPhase { modes: Vec<usize> },
    /// `U = Π U_x(i, j, −θ/2)`, i.e. `e^{−iθ Σ (ñ_i − ñ_j)/2}` in the `U_y(π/4)` frame.
    UxHalfAngle { pairs: Vec<(usize, usize)> },
    /// `U = Π U_y(i, j, θ/2)`, i.e. `e^{−iθ Σ (ñ_i − ñ_j)/2}` in the `U_x(π/4)` frame.
    UyHalfAngle { pairs: Vec<(usize, usize)> },
}

impl ReshapeComponent {
    fn gates(&self, theta: f64) -> Vec<FloGate> {
        match self {
            ReshapeComponent::NumberPhase { modes } => vec![FloGate::number_phase(modes, theta)],
            ReshapeComponent::UxHalfAngle { pairs } => {
                pairs.iter().map(|&(i, j)| FloGate::ux(i, j, -theta / 2.0)).collect()
            }
            ReshapeComponent::UyHalfAngle { pairs } => {
                pairs.iter().map(|&(i, j)| FloGate::uy(i, j, theta / 2.0)).collect()
            }
        }
    }

    /// Diagonal charge `q(b)` in the component's frame.
    fn charge(&self, basis: usize) -> f64 {
        match self {
            ReshapeComponent::NumberPhase { modes } => {
                modes.iter().filter(|&&m| is_occupied(basis, m)).count() as f64
            }
            ReshapeComponent::UxHalfAngle { pairs } | ReshapeComponent::UyHalfAngle { pairs } => pairs
                .iter()
                .map(|&(i, j)| {
                    (is_occupied(basis, i) as i32 - is_occupied(basis, j) as i32) as f64 / 2.0
                })
                .sum(),
        }
    }

    fn modes(&self) -> Vec<usize> {
        match self {
            ReshapeComponent::NumberPhase { modes } => modes.clone(),
            ReshapeComponent::UxHalfAngle { pairs } | ReshapeComponent::UyHalfAngle { pairs } => {
                pairs.iter().flat_map(|&(i, j)| [i, j]).collect()
            }
        }
    }
}

/// Product of independent reshaping components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub components: Vec<ReshapeComponent>,
}

impl Distribution {
    /// `θ` fixed at zero in effect: no reshaping at all.
    pub fn trivial() -> Self {
        Self::default()
    }

    /// `e^{−iθ Σ n_k}` over a mode set (both spins of a site, in the protocol).
    pub fn site_pair_phase(modes: &[usize]) -> Self {
        Self { components: vec![ReshapeComponent::NumberPhase { modes: modes.to_vec() }] }
    }

    pub fn single_mode_phase(mode: usize) -> Self {
        Self::site_pair_phase(&[mode])
    }

    pub fn ux_half_angle(pairs: &[(usize, usize)]) -> Self {
        Self { components: vec![ReshapeComponent::UxHalfAngle { pairs: pairs.to_vec() }] }
    }

    pub fn uy_half_angle(pairs: &[(usize, usize)]) -> Self {
        Self { components: vec![ReshapeComponent::UyHalfAngle { pairs: pairs.to_vec() }] }
    }

    /// Independent `e^{−iθ_s (n_{s↑} + n_{s↓})}` for every listed site.
    pub fn manybody_phase(sites: &[usize]) -> Self {
        Self {
            components: sites
                .iter()
                .map(|&s| ReshapeComponent::NumberPhase { modes: vec![2 * s, 2 * s + 1] })
                .collect(),
        }
    }

    /// Independent product of two distributions.
    pub fn and(mut self, other: Distribution) -> Self {
        self.components.extend(other.components);
        self
    }

    pub fn is_trivial(&self) -> bool {
        self.components.is_empty()
    }

    pub fn n_angles(&self) -> usize {
        self.components.len()
    }

    /// Gates of `U(θ)` for one angle per component.
    pub fn unitary_gates(&self, thetas: &[f64]) -> Vec<FloGate> {
        self.components
            .iter()
            .zip(thetas)
            .flat_map(|(c, &t)| c.gates(t))
            .collect()
    }

    /// Number of two-mode or phase gates in one sampled `U`.
    pub fn gates_per_unitary(&self) -> usize {
        self.unitary_gates(&vec![0.0; self.n_angles()]).len()
    }

    /// The frame `R` (as gates applied in order) diagonalizing every component.
    pub fn frame_gates(&self) -> Vec<FloGate> {
        let mut g = Vec::new();
        for c in &self.components {
            match c {
                ReshapeComponent::UxHalfAngle { pairs } => {
                    g.extend(pairs.iter().map(|&(i, j)| FloGate::uy(i, j, ROTATION_ANGLE)))
                }
                ReshapeComponent::UyHalfAngle { pairs } => {
                    g.extend(pairs.iter().map(|&(i, j)| FloGate::ux(i, j, ROTATION_ANGLE)))
                }
                ReshapeComponent::NumberPhase { .. } => {}
            }
        }
        g
    }

    /// Check that the components commute and share one diagonal frame:
    /// rotated pairs are disjoint, and a number phase either avoids a rotated
    /// pair or covers both of its modes.
    pub fn validate(&self, layout: ModeLayout) -> Result<()> {
        let mut rotated: Vec<(usize, usize)> = Vec::new();
        for c in &self.components {
            for m in c.modes() {
                layout.check_mode(m)?;
            }
            if let ReshapeComponent::UxHalfAngle { pairs } | ReshapeComponent::UyHalfAngle { pairs } = c {
                for &(i, j) in pairs {
                    if i == j {
                        return Err(Error::UnsupportedDistribution(format!("pair ({i}, {j}) repeats a mode")));
                    }
                    if rotated.iter().any(|&(a, b)| [a, b].contains(&i) || [a, b].contains(&j)) {
                        return Err(Error::UnsupportedDistribution(format!(
                            "rotated pairs overlap at ({i}, {j})"
                        )));
                    }
                    rotated.push((i, j));
                }
            }
            if let ReshapeComponent::NumberPhase { modes } = c {
                if modes.is_empty() {
                    return Err(Error::UnsupportedDistribution("empty number phase".into()));
                }
            }
        }
        for c in &self.components {
            if let ReshapeComponent::NumberPhase { modes } = c {
                for &(i, j) in &rotated {
                    if modes.contains(&i) != modes.contains(&j) {
                        return Err(Error::UnsupportedDistribution(format!(
                            "number phase on {modes:?} splits rotated pair ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `q_k(b)` for every component `k` and basis state `b < dim`.
    fn charges(&self, dim: usize) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| (0..dim).map(|b| c.charge(b)).collect())
            .collect()
    }

    pub fn sample_thetas<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.n_angles()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
    }
}

/// `E[e^{iθx}]` for `θ ~ U[0, 2π)`.
pub fn phase_average(x: f64) -> C64 {
    if x.abs() < 1e-12 {
        return ONE;
    }
    if (x - x.round()).abs() < 1e-12 {
        return ZERO;
    }
    let z = C64::new(0.0, 2.0 * PI * x);
    (z.exp() - ONE) / z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReshapeConfig {
    pub r: usize,
    pub distribution: Distribution,
    pub rng_seed: u64,
}

#[derive(Clone, Debug)]
pub struct EvolutionSpec {
    pub hamiltonian: OperatorMatrix,
    pub t: f64,
    pub reshape: Option<ReshapeConfig>,
}

/// Reshaping step count `r = ceil(c_r t²)`, at least 1.
pub fn steps_for(t: f64, c_r: f64) -> usize {
    ((c_r * t * t).ceil() as usize).max(1)
}

/// Eigendecomposition of a Hermitian matrix, reusable for any duration.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub layout: ModeLayout,
    vectors: DMatrix<C64>,
    values: DVector<f64>,
}

impl Propagator {
    pub fn new(h: &OperatorMatrix) -> Result<Self> {
        h.ensure_hermitian(HERMITIAN_TOL)?;
        let eig = h.entries.clone().symmetric_eigen();
        Ok(Self { layout: h.layout, vectors: eig.eigenvectors, values: eig.eigenvalues })
    }

    /// `e^{−iHt}` as a dense matrix.
    pub fn unitary(&self, t: f64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        for (k, &l) in self.values.iter().enumerate() {
            let ph = C64::from_polar(1.0, -l * t);
            for v in scaled.column_mut(k).iter_mut() {
                *v *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }

    pub fn evolve(&self, state: &StateVector, t: f64) -> StateVector {
        let coeffs = self.vectors.adjoint() * &state.amplitudes;
        let phased = DVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(self.values.iter()).map(|(c, &l)| c * C64::from_polar(1.0, -l * t)),
        );
        StateVector { layout: state.layout, amplitudes: &self.vectors * phased }
    }
}

/// `e^{−iHt}|ψ⟩` through the eigendecomposition of `H`.
pub fn evolve_exact(state: &StateVector, h: &OperatorMatrix, t: f64) -> Result<StateVector> {
    Ok(Propagator::new(h)?.evolve(state, t))
}

/// One random realization of `Π_j U_j† e^{−iHt/r} U_j`, step 1 acting first.
pub fn evolve_reshaped(state: &StateVector, spec: &EvolutionSpec) -> Result<StateVector> {
    let cfg = spec.reshape.as_ref().ok_or_else(|| {
        Error::UnsupportedDistribution("reshaped evolution requested without a reshape config".into())
    })?;
    let prop = Propagator::new(&spec.hamiltonian)?;
    evolve_reshaped_with(state, &prop, spec.t, cfg)
}

/// Same as [`evolve_reshaped`] with a prebuilt propagator.
pub fn evolve_reshaped_with(
    state: &StateVector,
    prop: &Propagator,
    t: f64,
    cfg: &ReshapeConfig,
) -> Result<StateVector> {
    if cfg.r == 0 {
        return Err(Error::Validation("reshaping needs r >= 1".into()));
    }
    cfg.distribution.validate(state.layout)?;
    let k = prop.unitary(t / cfg.r as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut psi = state.amplitudes.clone();
    let layout = state.layout;
    for _ in 0..cfg.r {
        let thetas = cfg.distribution.sample_thetas(&mut rng);
        let gates = cfg.distribution.unitary_gates(&thetas);
        let mut m = DMatrix::from_column_slice(psi.len(), 1, psi.as_slice());
        for g in &gates {
            crate::flo::left_multiply(g, layout, &mut m)?;
        }
        m = &k * m;
        for g in gates.iter().rev() {
            crate::flo::left_multiply(&g.inverse(), layout, &mut m)?;
        }
        psi = m.column(0).into_owned();
    }
    Ok(StateVector { layout, amplitudes: psi })
}

fn conjugate_by_frame(m: &mut DMatrix<C64>, frame: &[FloGate], layout: ModeLayout, inverse: bool) -> Result<()> {
    if inverse {
        for g in frame.iter().rev() {
            conjugate_density(&g.inverse(), layout, m)?;
        }
    } else {
        for g in frame {
            conjugate_density(g, layout, m)?;
        }
    }
    Ok(())
}

/// Exact `E_θ[U(θ)† H U(θ)]`: rotate into the common frame, multiply every
/// entry by the averaged phase of its charge difference, rotate back.
pub fn effective_hamiltonian(h: &OperatorMatrix, dist: &Distribution) -> Result<OperatorMatrix> {
    dist.validate(h.layout)?;
    let layout = h.layout;
    let frame = dist.frame_gates();
    let mut m = h.entries.clone();
    conjugate_by_frame(&mut m, &frame, layout, true)?;
    let charges = dist.charges(layout.dim());
    for a in 0..layout.dim() {
        for c in 0..layout.dim() {
            if m[(a, c)] == ZERO {
                continue;
            }
            let mut w = ONE;
            for q in &charges {
                w *= phase_average(q[a] - q[c]);
            }
            m[(a, c)] *= w;
        }
    }
    conjugate_by_frame(&mut m, &frame, layout, false)?;
    OperatorMatrix::from_entries(layout, m)
}

/// Basis states of the system grouped by particle number.
fn number_sectors(n_modes: usize) -> Vec<Vec<usize>> {
    let mut s = vec![Vec::new(); n_modes + 1];
    for b in 0..(1usize << n_modes) {
        s[b.count_ones() as usize].push(b);
    }
    s
}

/// Averaged reshaped evolution for one Hamiltonian and one distribution.
///
/// Works on the system modes only: ancillae never evolve, so the density
/// matrix splits into system blocks `X_{ββ'}` labelled by ancilla patterns,
/// and each block evolves under the same system channel. The channel also
/// preserves particle number on both sides, so blocks split further into
/// sector pairs `(N_a, N_b)`.
#[derive(Clone, Debug)]
pub struct AveragedEvolver {
    system_layout: ModeLayout,
    dist: Distribution,
    frame: Vec<FloGate>,
    sectors: Vec<Vec<usize>>,
    /// Eigen-decomposition of the frame Hamiltonian, per sector.
    sector_eigen: Vec<(DMatrix<C64>, DVector<f64>)>,
    charges: Vec<Vec<f64>>,
}

impl AveragedEvolver {
    /// `h_system` must live on a layout without ancillae.
    pub fn new(h_system: &OperatorMatrix, dist: &Distribution) -> Result<Self> {
        let layout = h_system.layout;
        if layout.n_ancilla_modes() != 0 {
            return Err(Error::Validation("averaged evolver takes a system-only Hamiltonian".into()));
        }
        h_system.ensure_hermitian(HERMITIAN_TOL)?;
        dist.validate(layout)?;
        let frame = dist.frame_gates();
        let mut hf = h_system.entries.clone();
        conjugate_by_frame(&mut hf, &frame, layout, true)?;
        let sectors = number_sectors(layout.n_system_modes());
        let mut sector_eigen = Vec::new();
        for sec in &sectors {
            let n = sec.len();
            let block = DMatrix::from_fn(n, n, |i, j| hf[(sec[i], sec[j])]);
            let eig = block.symmetric_eigen();
            sector_eigen.push((eig.eigenvectors, eig.eigenvalues));
        }
        for a in 0..layout.dim() {
            for c in 0..layout.dim() {
                if a.count_ones() != c.count_ones() && hf[(a, c)].norm() > 1e-12 {
                    return Err(Error::Validation("Hamiltonian does not conserve particle number".into()));
                }
            }
        }
        Ok(Self {
            system_layout: layout,
            dist: dist.clone(),
            frame,
            charges: dist.charges(layout.dim()),
            sectors,
            sector_eigen,
        })
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    fn sector_propagator(&self, n: usize, tau: f64) -> DMatrix<C64> {
        let (v, l) = &self.sector_eigen[n];
        let mut scaled = v.clone();
        for (k, &lk) in l.iter().enumerate() {
            let ph = C64::from_polar(1.0, -lk * tau);
            for x in scaled.column_mut(k).iter_mut() {
                *x *= ph;
            }
        }
        scaled * v.adjoint()
    }

    fn weight(&self, a: usize, b: usize, c: usize, d: usize) -> C64 {
        let mut w = ONE;
        for q in &self.charges {
            w *= phase_average(q[a] - q[c] - q[b] + q[d]);
            if w == ZERO {
                break;
            }
        }
        w
    }

    /// Expected density matrix after `r` reshaped steps of total time `t`
    /// (`r = 0` means exact evolution under `H` without reshaping), starting
    /// from a pure state on a layout with the same system modes plus any
    /// ancillae. Returned on the full layout.
    pub fn averaged_density(&self, state: &StateVector, t: f64, r: usize) -> Result<DMatrix<C64>> {
        let layout = state.layout;
        let ms = self.system_layout.n_system_modes();
        if layout.n_system_modes() != ms {
            return Err(Error::Validation("state and Hamiltonian disagree on system modes".into()));
        }
        let ds = 1usize << ms;
        let na = 1usize << layout.n_ancilla_modes();
        // Move the input into the frame.
        let mut psi = DMatrix::from_column_slice(state.dim(), 1, state.amplitudes.as_slice());
        for g in self.frame.iter().rev() {
            crate::flo::left_multiply(&g.inverse(), layout, &mut psi)?;
        }
        // Ancilla blocks ψ_β and the sectors each one touches.
        let blocks: Vec<Vec<C64>> = (0..na)
            .map(|beta| (0..ds).map(|a| psi[(a + (beta << ms), 0)]).collect())
            .collect();
        let live: Vec<usize> = (0..na)
            .filter(|&beta| blocks[beta].iter().any(|z| z.norm_sqr() > 0.0))
            .collect();
        let n_sec = self.sectors.len();
        let mut occupied_sectors = vec![false; n_sec];
        for &beta in &live {
            for (a, z) in blocks[beta].iter().enumerate() {
                if z.norm_sqr() > 0.0 {
                    occupied_sectors[a.count_ones() as usize] = true;
                }
            }
        }
        let (steps, tau) = if r == 0 { (1, t) } else { (r, t / r as f64) };
        let props: Vec<Option<DMatrix<C64>>> = (0..n_sec)
            .map(|n| occupied_sectors[n].then(|| self.sector_propagator(n, tau)))
            .collect();

        let mut rho = DMatrix::from_element(layout.dim(), layout.dim(), ZERO);
        for na_sec in 0..n_sec {
            if !occupied_sectors[na_sec] {
                continue;
            }
            for nb_sec in 0..n_sec {
                if !occupied_sectors[nb_sec] {
                    continue;
                }
                let sa = &self.sectors[na_sec];
                let sb = &self.sectors[nb_sec];
                // Input vectors: X_{ββ'} restricted to this sector pair.
                let mut inputs: Vec<(usize, usize, Vec<C64>)> = Vec::new();
                for &b1 in &live {
                    for &b2 in &live {
                        let x: Vec<C64> = sa
                            .iter()
                            .flat_map(|&a| sb.iter().map(move |&b| (a, b)))
                            .map(|(a, b)| blocks[b1][a] * blocks[b2][b].conj())
                            .collect();
                        if x.iter().any(|z| z.norm_sqr() > 0.0) {
                            inputs.push((b1, b2, x));
                        }
                    }
                }
                if inputs.is_empty() {
                    continue;
                }
                let ka = props[na_sec].as_ref().expect("occupied sector has a propagator");
                let kb = props[nb_sec].as_ref().expect("occupied sector has a propagator");
                let outputs = if r == 0 || self.dist.is_trivial() {
                    self.evolve_plain(ka, kb, sa.len(), sb.len(), steps, &inputs)
                } else {
                    self.evolve_channel(ka, kb, sa, sb, steps, &inputs)
                };
                for ((b1, b2, _), y) in inputs.iter().zip(outputs) {
                    for (ia, &a) in sa.iter().enumerate() {
                        for (ib, &b) in sb.iter().enumerate() {
                            rho[(a + (b1 << ms), b + (b2 << ms))] = y[ia * sb.len() + ib];
                        }
                    }
                }
            }
        }
        for g in &self.frame {
            conjugate_density(g, layout, &mut rho)?;
        }
        Ok(rho)
    }

    /// Unreshaped: `X ↦ K^s X K^{s†}`.
    fn evolve_plain(
        &self,
        ka: &DMatrix<C64>,
        kb: &DMatrix<C64>,
        na: usize,
        nb: usize,
        steps: usize,
        inputs: &[(usize, usize, Vec<C64>)],
    ) -> Vec<Vec<C64>> {
        let ka = matrix_power(ka, steps);
        let kb = matrix_power(kb, steps);
        inputs
            .iter()
            .map(|(_, _, x)| {
                let xm = DMatrix::from_row_slice(na, nb, x);
                let y = &ka * xm * kb.adjoint();
                (0..na).flat_map(|i| (0..nb).map(move |j| (i, j))).map(|(i, j)| y[(i, j)]).collect()
            })
            .collect()
    }

    /// Reshaped: apply `Φ^steps` with `Φ_{(ab),(cd)} = K_ac conj(K_bd) Π w(Δq)`.
    fn evolve_channel(
        &self,
        ka: &DMatrix<C64>,
        kb: &DMatrix<C64>,
        sa: &[usize],
        sb: &[usize],
        steps: usize,
        inputs: &[(usize, usize, Vec<C64>)],
    ) -> Vec<Vec<C64>> {
        let nb = sb.len();
        let n = sa.len() * nb;
        // Pairs whose charge differences Δ_k = q_k(a) − q_k(b) differ by a
        // nonzero integer never mix. A component whose Δ_k values share one
        // fractional part in this block therefore labels invariant groups.
        let delta = |k: usize, idx: usize| {
            let q = &self.charges[k];
            q[sa[idx / nb]] - q[sb[idx % nb]]
        };
        let labelling: Vec<usize> = (0..self.charges.len())
            .filter(|&k| {
                let f0 = delta(k, 0).rem_euclid(1.0);
                (0..n).all(|i| {
                    let f = delta(k, i).rem_euclid(1.0);
                    (f - f0).abs() < 1e-9 || (f - f0).abs() > 1.0 - 1e-9
                })
            })
            .collect();
        let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
        for idx in 0..n {
            let key = labelling.iter().map(|&k| (2.0 * delta(k, idx)).round() as i64).collect();
            groups.entry(key).or_default().push(idx);
        }
        let mut outputs = vec![vec![ZERO; n]; inputs.len()];
        for members in groups.values() {
            let active: Vec<usize> = (0..inputs.len())
                .filter(|&k| members.iter().any(|&i| inputs[k].2[i].norm_sqr() > 0.0))
                .collect();
            if active.is_empty() {
                continue;
            }
            let g = members.len();
            let phi = DMatrix::from_fn(g, g, |row, col| {
                let (ia, ib) = (members[row] / nb, members[row] % nb);
                let (ic, id) = (members[col] / nb, members[col] % nb);
                let k = ka[(ia, ic)] * kb[(ib, id)].conj();
                if k == ZERO {
                    return ZERO;
                }
                k * self.weight(sa[ia], sb[ib], sa[ic], sb[id])
            });
            let mut xs = DMatrix::from_fn(g, active.len(), |row, col| inputs[active[col]].2[members[row]]);
            // Repeated application is cheaper than squaring for short sequences.
            let squarings = 2.0 * (steps as f64).log2().ceil().max(1.0) * g as f64;
            if (steps * active.len()) as f64 <= squarings {
                for _ in 0..steps {
                    xs = &phi * xs;
                }
            } else {
                xs = matrix_power(&phi, steps) * xs;
            }
            for (col, &k) in active.iter().enumerate() {
                for (row, &i) in members.iter().enumerate() {
                    outputs[k][i] = xs[(row, col)];
                }
            }
        }
        outputs
    }
}

/// `m^p` by binary exponentiation.
pub fn matrix_power(m: &DMatrix<C64>, mut p: usize) -> DMatrix<C64> {
    let n = m.nrows();
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut base = m.clone();
    let mut first = true;
    while p > 0 {
        if p & 1 == 1 {
            result = if first { base.clone() } else { &result * &base };
            first = false;
        }
        p >>= 1;
        if p > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Probability distribution over basis states from a density-matrix diagonal.
pub fn diagonal_weights(rho: &DMatrix<C64>) -> Vec<f64> {
    (0..rho.nrows()).map(|i| rho[(i, i)].re.max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flo::{apply_gates, prepare_probe, sequence_matrix, ProbeSpec};
    use crate::fock::{number_op, occupation_probabilities, vacuum};
    use crate::model::{build_hamiltonian, random_model, HubbardModel, InteractionGraph, TwoSiteModel};

    fn two_site_h(seed: u64, ancillae: usize) -> OperatorMatrix {
        let m = TwoSiteModel::random(seed, 1.0).to_hubbard(1.0);
        build_hamiltonian(&m, ModeLayout::for_sites(2, ancillae).unwrap()).unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let h = two_site_h(1, 0);
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 1), h.layout).unwrap();
        let out = evolve_exact(&s, &h, 0.0).unwrap();
        assert!((out.amplitudes - s.amplitudes).norm() < 1e-14);
    }

    #[test]
    fn single_site_relative_phase() {
        let mut m = HubbardModel::zero(InteractionGraph::new(1, &[]).unwrap(), 1.0);
        m.chemical[0] = [0.7, -0.2];
        m.onsite[0] = 0.4;
        let l = ModeLayout::for_sites(1, 1).unwrap();
        let h = build_hamiltonian(&m, l).unwrap();
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 2), l).unwrap();
        let t = 1.3;
        let out = evolve_exact(&s, &h, t).unwrap();
        let both = 0b101;
        let rel = out.amplitudes[both] / out.amplitudes[0];
        assert!((rel - C64::from_polar(1.0, -0.7 * t)).norm() < 1e-12);
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn reshaped_equals_exact_when_h_commutes() {
        let mut m = HubbardModel::zero(InteractionGraph::chain(2), 1.0);
        m.chemical = vec![[0.3, -0.4], [0.1, 0.8]];
        m.onsite = vec![0.5, -0.6];
        let l = ModeLayout::for_sites(2, 0).unwrap();
        let h = build_hamiltonian(&m, l).unwrap();
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 2), l).unwrap();
        let spec = EvolutionSpec {
            hamiltonian: h.clone(),
            t: 1.7,
            reshape: Some(ReshapeConfig { r: 5, distribution: Distribution::site_pair_phase(&[0, 1]), rng_seed: 3 }),
        };
        let a = evolve_reshaped(&s, &spec).unwrap();
        let b = evolve_exact(&s, &h, 1.7).unwrap();
        assert!((a.amplitudes - b.amplitudes).norm() < 1e-11);
    }

    #[test]
    fn reshaped_is_deterministic_under_seed() {
        let h = two_site_h(2, 0);
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 1), h.layout).unwrap();
        let spec = EvolutionSpec {
            hamiltonian: h,
            t: 1.0,
            reshape: Some(ReshapeConfig { r: 7, distribution: Distribution::site_pair_phase(&[0, 1]), rng_seed: 9 }),
        };
        let a = evolve_reshaped(&s, &spec).unwrap();
        let b = evolve_reshaped(&s, &spec).unwrap();
        assert_eq!(a.amplitudes, b.amplitudes);
    }

    #[test]
    fn sampled_unitary_matches_frame_form() {
        // U(θ) = R e^{−iθQ} R† for every component family.
        let l = ModeLayout::new(4, 0).unwrap();
        let dists = [
            Distribution::ux_half_angle(&[(0, 2), (1, 3)]),
            Distribution::uy_half_angle(&[(0, 2), (1, 3)]),
            Distribution::site_pair_phase(&[0, 1]),
        ];
        for d in dists {
            let th = 1.234;
            let u = sequence_matrix(&d.unitary_gates(&[th]), l).unwrap();
            let r = sequence_matrix(&d.frame_gates(), l).unwrap();
            let q = d.charges(l.dim());
            let mut diag = OperatorMatrix::zeros(l);
            for b in 0..l.dim() {
                diag.entries[(b, b)] = C64::from_polar(1.0, -th * q[0][b]);
            }
            let rebuilt = r.matmul(&diag).matmul(&r.dagger());
            assert!(u.max_abs_diff(&rebuilt) < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn effective_hamiltonian_removes_site_hopping() {
        let tm = TwoSiteModel::random(5, 1.0);
        let l = ModeLayout::for_sites(2, 0).unwrap();
        let h = build_hamiltonian(&tm.to_hubbard(1.0), l).unwrap();
        let heff = effective_hamiltonian(&h, &Distribution::site_pair_phase(&[0, 1])).unwrap();
        let mut no_hop = tm;
        no_hop.h13 = ZERO;
        no_hop.h24 = ZERO;
        let expect = build_hamiltonian(&no_hop.to_hubbard(1.0), l).unwrap();
        assert!(heff.max_abs_diff(&expect) < 1e-12);
        // Already number-conserving per mode: unchanged.
        let again = effective_hamiltonian(&expect, &Distribution::site_pair_phase(&[0, 1])).unwrap();
        assert!(again.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn overlapping_pairs_are_unsupported() {
        let l = ModeLayout::new(4, 0).unwrap();
        let d = Distribution::ux_half_angle(&[(0, 2)]).and(Distribution::uy_half_angle(&[(2, 3)]));
        assert!(matches!(d.validate(l), Err(Error::UnsupportedDistribution(_))));
        let d = Distribution::ux_half_angle(&[(0, 2)]).and(Distribution::single_mode_phase(0));
        assert!(matches!(d.validate(l), Err(Error::UnsupportedDistribution(_))));
    }

    #[test]
    fn phase_average_values() {
        assert_eq!(phase_average(0.0), ONE);
        assert_eq!(phase_average(2.0), ZERO);
        assert!((phase_average(0.5) - C64::new(0.0, 2.0 / PI)).norm() < 1e-15);
        assert!((phase_average(-0.5) - C64::new(0.0, -2.0 / PI)).norm() < 1e-15);
    }

    #[test]
    fn averaged_evolver_without_reshaping_is_exact() {
        let m = random_model(&InteractionGraph::chain(2), 8, 1.0);
        let full = ModeLayout::for_sites(2, 1).unwrap();
        let h_full = build_hamiltonian(&m, full).unwrap();
        let h_sys = build_hamiltonian(&m, full.system_only()).unwrap();
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 4), full).unwrap();
        let ev = AveragedEvolver::new(&h_sys, &Distribution::trivial()).unwrap();
        let rho = ev.averaged_density(&s, 2.1, 0).unwrap();
        let psi = evolve_exact(&s, &h_full, 2.1).unwrap();
        let expect = &psi.amplitudes * psi.amplitudes.adjoint();
        assert!(crate::fock::max_abs(&(rho - expect)) < 1e-12);
    }

    #[test]
    fn averaged_evolver_with_r1_matches_explicit_average() {
        // One step: E_θ[U† K U ρ U† K† U] by fine quadrature in θ.
        let m = random_model(&InteractionGraph::chain(2), 12, 1.0);
        let full = ModeLayout::for_sites(2, 1).unwrap();
        let h_full = build_hamiltonian(&m, full).unwrap();
        let h_sys = build_hamiltonian(&m, full.system_only()).unwrap();
        let probe = ProbeSpec::gaussian_pair(0, 4).rotated(vec![FloGate::uy(0, 2, ROTATION_ANGLE)]);
        let s = prepare_probe(&probe, full).unwrap();
        for dist in [Distribution::ux_half_angle(&[(0, 2), (1, 3)]), Distribution::site_pair_phase(&[0, 1])] {
            let ev = AveragedEvolver::new(&h_sys, &dist).unwrap();
            let t = 0.9;
            let rho = ev.averaged_density(&s, t, 1).unwrap();
            let k = Propagator::new(&h_full).unwrap().unitary(t);
            let grid = 512;
            let mut acc = DMatrix::from_element(full.dim(), full.dim(), ZERO);
            for g in 0..grid {
                let th = 2.0 * PI * g as f64 / grid as f64;
                let u = sequence_matrix(&dist.unitary_gates(&[th]), full).unwrap().entries;
                let psi = u.adjoint() * &k * &u * &s.amplitudes;
                acc += &psi * psi.adjoint();
            }
            acc /= C64::new(grid as f64, 0.0);
            assert!(crate::fock::max_abs(&(rho - acc)) < 1e-10, "{dist:?}");
        }
    }

    #[test]
    fn trajectory_mean_agrees_with_averaged_channel() {
        let m = random_model(&InteractionGraph::chain(2), 21, 1.0);
        let full = ModeLayout::for_sites(2, 1).unwrap();
        let h_full = build_hamiltonian(&m, full).unwrap();
        let h_sys = build_hamiltonian(&m, full.system_only()).unwrap();
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 4), full).unwrap();
        let dist = Distribution::site_pair_phase(&[0, 1]);
        let (t, r) = (1.0, 4);
        let rho = AveragedEvolver::new(&h_sys, &dist).unwrap().averaged_density(&s, t, r).unwrap();
        let p_channel = rho[(0, 0)].re;
        let prop = Propagator::new(&h_full).unwrap();
        let n = 2000;
        let mut vals = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let cfg = ReshapeConfig { r, distribution: dist.clone(), rng_seed: seed };
            let out = evolve_reshaped_with(&s, &prop, t, &cfg).unwrap();
            vals.push(out.amplitudes[0].norm_sqr());
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - p_channel).abs() < 4.0 * se + 1e-12, "{mean} vs {p_channel} (se {se})");
    }

    #[test]
    fn partial_decoupling_matches_full_decoupling() {
        // ω1 probe with modes 2, 4 empty: the single-mode phase suffices.
        let tm = TwoSiteModel::random(31, 1.0);
        let full = ModeLayout::for_sites(2, 1).unwrap();
        let h = build_hamiltonian(&tm.to_hubbard(1.0), full).unwrap();
        let s = prepare_probe(&ProbeSpec::gaussian_pair(0, 4), full).unwrap();
        let t = 2.3;
        let part = effective_hamiltonian(&h, &Distribution::single_mode_phase(0)).unwrap();
        let whole = effective_hamiltonian(&h, &Distribution::site_pair_phase(&[0, 1])).unwrap();
        let unrot = [FloGate::v(0, 4, crate::flo::PREP_ANGLE).inverse()];
        let pa = apply_gates(&unrot, &evolve_exact(&s, &part, t).unwrap()).unwrap();
        let pb = apply_gates(&unrot, &evolve_exact(&s, &whole, t).unwrap()).unwrap();
        let da = occupation_probabilities(&pa, &[0, 4]).unwrap();
        let db = occupation_probabilities(&pb, &[0, 4]).unwrap();
        for (x, y) in da.probs.iter().zip(&db.probs) {
            assert!((x - y).abs() < 1e-10);
        }
        let _ = (vacuum(full), number_op(full, 0));
    }
}
