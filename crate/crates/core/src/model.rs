//! Hubbard Hamiltonians on bounded-degree interaction graphs.
//!
//! A model stores one complex hopping amplitude per (edge, spin), one real
//! chemical potential per spin mode and one on-site interaction per site.
//! Edges are kept with `i < j`; the amplitude multiplies `a†_i a_j` and its
//! conjugate multiplies `a†_j a_i`.

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fock::{
    annihilation_op, apply_ladder_string, creation_op, is_occupied, ModeLayout, OperatorMatrix,
    Spin, C64, ONE, ZERO,
};

/// Slack allowed when checking coefficient magnitudes against `lambda_max`.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionGraph {
    n_sites: usize,
    edges: Vec<(usize, usize)>,
}

impl InteractionGraph {
    /// Normalizes every edge to `(min, max)`, sorts and deduplicates.
    pub fn new(n_sites: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Validation(format!("self-loop on site {a}")));
            }
            if a >= n_sites || b >= n_sites {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) references a site outside 0..{n_sites}"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n_sites,
            edges: set.into_iter().collect(),
        })
    }

    pub fn with_degree_bound(n_sites: usize, edges: &[(usize, usize)], deg_max: usize) -> Result<Self> {
        let g = Self::new(n_sites, edges)?;
        if g.max_degree() > deg_max {
            return Err(Error::Validation(format!(
                "graph degree {} exceeds bound {deg_max}",
                g.max_degree()
            )));
        }
        Ok(g)
    }

    pub fn chain(n_sites: usize) -> Self {
        let edges: Vec<_> = (1..n_sites).map(|i| (i - 1, i)).collect();
        Self::new(n_sites, &edges).expect("chain edges are valid")
    }

    pub fn ring(n_sites: usize) -> Self {
        let mut edges: Vec<_> = (1..n_sites).map(|i| (i - 1, i)).collect();
        if n_sites > 2 {
            edges.push((0, n_sites - 1));
        }
        Self::new(n_sites, &edges).expect("ring edges are valid")
    }

    /// Random graph with every degree at most `deg_max`: candidate pairs are
    /// visited in shuffled order and kept while both endpoints have room.
    pub fn random_bounded_degree(n_sites: usize, deg_max: usize, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs: Vec<(usize, usize)> = (0..n_sites)
            .flat_map(|i| (i + 1..n_sites).map(move |j| (i, j)))
            .collect();
        pairs.shuffle(&mut rng);
        let mut degree = vec![0usize; n_sites];
        let mut edges = Vec::new();
        for (i, j) in pairs {
            if degree[i] < deg_max && degree[j] < deg_max {
                degree[i] += 1;
                degree[j] += 1;
                edges.push((i, j));
            }
        }
        Self::new(n_sites, &edges).expect("generated edges are valid")
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_sites).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// Sites that touch no edge.
    pub fn isolated_sites(&self) -> Vec<usize> {
        (0..self.n_sites).filter(|&v| self.degree(v) == 0).collect()
    }
}

/// One real parameter of a Hubbard model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Coefficient {
    Omega { site: usize, spin: Spin },
    Xi { site: usize },
    ReHop { i: usize, j: usize, spin: Spin },
    ImHop { i: usize, j: usize, spin: Spin },
}

impl Coefficient {
    pub fn name(&self) -> String {
        match *self {
            Coefficient::Omega { site, spin } => format!("omega_{site}_{}", spin.arrow()),
            Coefficient::Xi { site } => format!("xi_{site}"),
            Coefficient::ReHop { i, j, spin } => format!("re_h_{i}_{j}_{}", spin.arrow()),
            Coefficient::ImHop { i, j, spin } => format!("im_h_{i}_{j}_{}", spin.arrow()),
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HubbardModel {
    pub graph: InteractionGraph,
    /// Indexed by edge position in `graph.edges()`, then spin.
    pub hopping: Vec<[C64; 2]>,
    /// Indexed by site, then spin.
    pub chemical: Vec<[f64; 2]>,
    pub onsite: Vec<f64>,
    pub lambda_max: f64,
}

impl HubbardModel {
    pub fn zero(graph: InteractionGraph, lambda_max: f64) -> Self {
        let n = graph.n_sites();
        let e = graph.edges().len();
        Self {
            graph,
            hopping: vec![[ZERO; 2]; e],
            chemical: vec![[0.0; 2]; n],
            onsite: vec![0.0; n],
            lambda_max,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.graph.n_sites()
    }

    /// Amplitude of `a†_{iσ} a_{jσ}` for a linked pair, in either orientation.
    pub fn hopping_amplitude(&self, i: usize, j: usize, spin: Spin) -> Option<C64> {
        let e = self.graph.edge_index(i, j)?;
        let h = self.hopping[e][spin.index()];
        Some(if i < j { h } else { h.conj() })
    }

    pub fn set_hopping(&mut self, i: usize, j: usize, spin: Spin, value: C64) -> Result<()> {
        let e = self.graph.edge_index(i, j).ok_or_else(|| {
            Error::Validation(format!("hopping on ({i}, {j}) but the graph has no such edge"))
        })?;
        self.hopping[e][spin.index()] = if i < j { value } else { value.conj() };
        Ok(())
    }

    /// Every real parameter, in a fixed order: per site ω↑, ω↓, ξ; then per
    /// edge Re h↑, Im h↑, Re h↓, Im h↓.
    pub fn coefficients(&self) -> Vec<Coefficient> {
        let mut out = Vec::new();
        for site in 0..self.n_sites() {
            out.push(Coefficient::Omega { site, spin: Spin::Up });
            out.push(Coefficient::Omega { site, spin: Spin::Down });
            out.push(Coefficient::Xi { site });
        }
        for &(i, j) in self.graph.edges() {
            for spin in Spin::BOTH {
                out.push(Coefficient::ReHop { i, j, spin });
                out.push(Coefficient::ImHop { i, j, spin });
            }
        }
        out
    }

    pub fn value(&self, c: Coefficient) -> Option<f64> {
        match c {
            Coefficient::Omega { site, spin } => self.chemical.get(site).map(|w| w[spin.index()]),
            Coefficient::Xi { site } => self.onsite.get(site).copied(),
            Coefficient::ReHop { i, j, spin } => self.hopping_amplitude(i, j, spin).map(|h| h.re),
            Coefficient::ImHop { i, j, spin } => self.hopping_amplitude(i, j, spin).map(|h| h.im),
        }
    }

    /// Largest coefficient magnitude actually present.
    pub fn max_coefficient(&self) -> f64 {
        let h = self.hopping.iter().flatten().map(|z| z.norm());
        let w = self.chemical.iter().flatten().map(|x| x.abs());
        let x = self.onsite.iter().map(|x| x.abs());
        h.chain(w).chain(x).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites();
        if self.chemical.len() != n || self.onsite.len() != n {
            return Err(Error::Validation("coefficient tables do not match site count".into()));
        }
        if self.hopping.len() != self.graph.edges().len() {
            return Err(Error::Validation("hopping table does not match edge count".into()));
        }
        if !(self.lambda_max > 0.0) || !self.lambda_max.is_finite() {
            return Err(Error::Validation(format!("lambda_max must be positive, got {}", self.lambda_max)));
        }
        let m = self.max_coefficient();
        if !m.is_finite() || m > self.lambda_max + BOUND_SLACK {
            return Err(Error::Validation(format!(
                "coefficient magnitude {m} exceeds lambda_max {}",
                self.lambda_max
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_model(self))?)
    }
}

/// Sum of `ω n`, `ξ n↑ n↓` and hopping terms on the system modes of `layout`;
/// ancilla modes see the identity.
pub fn build_hamiltonian(model: &HubbardModel, layout: ModeLayout) -> Result<OperatorMatrix> {
    model.validate()?;
    if layout.n_system_modes() != 2 * model.n_sites() {
        return Err(Error::Validation(format!(
            "layout has {} system modes, model needs {}",
            layout.n_system_modes(),
            2 * model.n_sites()
        )));
    }
    let mut op = OperatorMatrix::zeros(layout);
    let dim = layout.dim();
    for b in 0..dim {
        let mut diag = 0.0;
        for site in 0..model.n_sites() {
            let up = is_occupied(b, 2 * site);
            let dn = is_occupied(b, 2 * site + 1);
            if up {
                diag += model.chemical[site][0];
            }
            if dn {
                diag += model.chemical[site][1];
            }
            if up && dn {
                diag += model.onsite[site];
            }
        }
        op.entries[(b, b)] = C64::new(diag, 0.0);
    }
    for (e, &(i, j)) in model.graph.edges().iter().enumerate() {
        for spin in Spin::BOTH {
            let h = model.hopping[e][spin.index()];
            if h == ZERO {
                continue;
            }
            let mi = 2 * i + spin.index();
            let mj = 2 * j + spin.index();
            for b in 0..dim {
                if let Some((s, out)) = apply_ladder_string(b, &[(mi, true), (mj, false)]) {
                    op.entries[(out, b)] += h * s;
                    op.entries[(b, out)] += h.conj() * s;
                }
            }
        }
    }
    Ok(op)
}

/// Draws every coefficient uniformly: ω, ξ in [-λ, λ]; Re h, Im h in
/// [-λ/√2, λ/√2] so that |h| ≤ λ.
pub fn random_model(graph: &InteractionGraph, seed: u64, lambda_max: f64) -> HubbardModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = HubbardModel::zero(graph.clone(), lambda_max);
    let hl = lambda_max / std::f64::consts::SQRT_2;
    for site in 0..graph.n_sites() {
        for s in 0..2 {
            model.chemical[site][s] = rng.gen_range(-lambda_max..=lambda_max);
        }
        model.onsite[site] = rng.gen_range(-lambda_max..=lambda_max);
    }
    for e in 0..graph.edges().len() {
        for s in 0..2 {
            model.hopping[e][s] = C64::new(rng.gen_range(-hl..=hl), rng.gen_range(-hl..=hl));
        }
    }
    model
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HoppingEntry {
    i: usize,
    j: usize,
    spin: Spin,
    re: f64,
    im: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ChemicalEntry {
    i: usize,
    spin: Spin,
    value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OnsiteEntry {
    i: usize,
    value: f64,
}

fn default_lambda() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelFile {
    n_sites: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    hopping: Vec<HoppingEntry>,
    #[serde(default)]
    chemical: Vec<ChemicalEntry>,
    #[serde(default)]
    onsite: Vec<OnsiteEntry>,
    #[serde(default = "default_lambda")]
    lambda_max: f64,
}

impl ModelFile {
    fn from_model(m: &HubbardModel) -> Self {
        let mut hopping = Vec::new();
        for (e, &(i, j)) in m.graph.edges().iter().enumerate() {
            for spin in Spin::BOTH {
                let h = m.hopping[e][spin.index()];
                hopping.push(HoppingEntry { i, j, spin, re: h.re, im: h.im });
            }
        }
        let mut chemical = Vec::new();
        let mut onsite = Vec::new();
        for i in 0..m.n_sites() {
            for spin in Spin::BOTH {
                chemical.push(ChemicalEntry { i, spin, value: m.chemical[i][spin.index()] });
            }
            onsite.push(OnsiteEntry { i, value: m.onsite[i] });
        }
        Self {
            n_sites: m.n_sites(),
            edges: m.graph.edges().iter().map(|&(i, j)| [i, j]).collect(),
            hopping,
            chemical,
            onsite,
            lambda_max: m.lambda_max,
        }
    }

    fn into_model(self) -> Result<HubbardModel> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = InteractionGraph::new(self.n_sites, &edges)?;
        let mut model = HubbardModel::zero(graph, self.lambda_max);
        for h in self.hopping {
            model.set_hopping(h.i, h.j, h.spin, C64::new(h.re, h.im))?;
        }
        for c in self.chemical {
            if c.i >= self.n_sites {
                return Err(Error::Validation(format!("chemical potential on missing site {}", c.i)));
            }
            model.chemical[c.i][c.spin.index()] = c.value;
        }
        for o in self.onsite {
            if o.i >= self.n_sites {
                return Err(Error::Validation(format!("on-site term on missing site {}", o.i)));
            }
            model.onsite[o.i] = o.value;
        }
        model.validate()?;
        Ok(model)
    }
}

/// Two linked sites with modes 1 = A↑, 2 = A↓, 3 = B↑, 4 = B↓.
///
/// `omega[k]` is the chemical potential of mode `k + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoSiteModel {
    pub h13: C64,
    pub h24: C64,
    pub omega: [f64; 4],
    pub xi12: f64,
    pub xi34: f64,
}

impl TwoSiteModel {
    pub fn to_hubbard(&self, lambda_max: f64) -> HubbardModel {
        let mut m = HubbardModel::zero(InteractionGraph::chain(2), lambda_max);
        m.hopping[0] = [self.h13, self.h24];
        m.chemical[0] = [self.omega[0], self.omega[1]];
        m.chemical[1] = [self.omega[2], self.omega[3]];
        m.onsite = vec![self.xi12, self.xi34];
        m
    }

    /// The cluster on edge `(a, b)` of a many-body model, `a` playing site A.
    pub fn from_cluster(model: &HubbardModel, a: usize, b: usize) -> Option<Self> {
        Some(Self {
            h13: model.hopping_amplitude(a, b, Spin::Up)?,
            h24: model.hopping_amplitude(a, b, Spin::Down)?,
            omega: [
                model.chemical[a][0],
                model.chemical[a][1],
                model.chemical[b][0],
                model.chemical[b][1],
            ],
            xi12: model.onsite[a],
            xi34: model.onsite[b],
        })
    }

    pub fn random(seed: u64, lambda_max: f64) -> Self {
        let m = random_model(&InteractionGraph::chain(2), seed, lambda_max);
        Self::from_cluster(&m, 0, 1).expect("chain has edge (0, 1)")
    }

    pub fn p(&self) -> f64 {
        (self.omega[0] + self.omega[2]) / 2.0
    }

    pub fn q(&self) -> f64 {
        (self.omega[1] + self.omega[3]) / 2.0
    }

    pub fn r(&self) -> f64 {
        (self.xi12 + self.xi34) / 4.0
    }
}

/// Which pair rotation defines the tilde modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationBasis {
    /// `ã = U_y(π/4) a U_y(π/4)†`: exposes Re h as number coefficients.
    Uy,
    /// `ã = U_x(π/4) a U_x(π/4)†`: exposes Im h as number coefficients.
    Ux,
}

impl RotationBasis {
    /// Matrix `N` with `(a_1, a_3)ᵀ = N (ã_1, ã_3)ᵀ`.
    fn inverse_mode_map(self) -> Matrix2<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| C64::new(re * s, im * s);
        match self {
            RotationBasis::Uy => Matrix2::new(c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)),
            RotationBasis::Ux => Matrix2::new(c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)),
        }
    }

    /// Phase `z` with `n_1 = (S − E)/2`, `n_3 = (S + E)/2`, where
    /// `S = ñ_1 + ñ_3` and `E = z ã†_1 ã_3 + z̄ ã†_3 ã_1`.
    pub fn exchange_phase(self) -> C64 {
        match self {
            RotationBasis::Uy => ONE,
            RotationBasis::Ux => C64::new(0.0, -1.0),
        }
    }
}

/// The two-site Hamiltonian rewritten in tilde modes.
///
/// ```text
/// H = Σ_k number[k] ñ_k
///   + (exchange13 ã†_1 ã_3 + h.c.) + (exchange24 ã†_2 ã_4 + h.c.)
///   + quartic_sum/4  · (S13 S24 + E13 E24)
///   + quartic_diff/4 · (S13 E24 + E13 S24)
/// ```
/// with `S13 = ñ_1 + ñ_3` and `E13 = z ã†_1 ã_3 + z̄ ã†_3 ã_1` (same for 2, 4).
/// `quartic_sum = ξ12 + ξ34`, `quartic_diff = ξ34 − ξ12`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugatedTable {
    pub basis: RotationBasis,
    pub number: [f64; 4],
    pub exchange13: C64,
    pub exchange24: C64,
    pub quartic_sum: f64,
    pub quartic_diff: f64,
}

impl ConjugatedTable {
    /// Coefficient of the conserving quartic `ñ1ñ2 + ñ2ñ3 + ñ3ñ4 + ñ1ñ4`.
    pub fn number_quartic(&self) -> f64 {
        self.quartic_sum / 4.0
    }

    /// Assemble the table with plain mode operators standing in for the
    /// tilde modes. The result equals `R† H R` where `R` rotates both pairs.
    pub fn assemble_in_plain_modes(&self, layout: ModeLayout, modes: [usize; 4]) -> Result<OperatorMatrix> {
        let c: Vec<_> = modes.iter().map(|&m| creation_op(layout, m)).collect::<Result<_>>()?;
        let a: Vec<_> = modes.iter().map(|&m| annihilation_op(layout, m)).collect::<Result<_>>()?;
        let n: Vec<_> = (0..4).map(|k| c[k].matmul(&a[k])).collect();
        let z = self.basis.exchange_phase();
        let hop = |x: usize, y: usize, coef: C64| {
            c[x].matmul(&a[y])
                .scale(coef)
                .plus(&c[y].matmul(&a[x]).scale(coef.conj()))
        };
        let s13 = n[0].plus(&n[2]);
        let s24 = n[1].plus(&n[3]);
        let e13 = hop(0, 2, z);
        let e24 = hop(1, 3, z);
        let mut h = OperatorMatrix::zeros(layout);
        for k in 0..4 {
            h = h.plus(&n[k].scale(C64::new(self.number[k], 0.0)));
        }
        h = h.plus(&hop(0, 2, self.exchange13)).plus(&hop(1, 3, self.exchange24));
        let qs = C64::new(self.quartic_sum / 4.0, 0.0);
        let qd = C64::new(self.quartic_diff / 4.0, 0.0);
        h = h.plus(&s13.matmul(&s24).plus(&e13.matmul(&e24)).scale(qs));
        h = h.plus(&s13.matmul(&e24).plus(&e13.matmul(&s24)).scale(qd));
        Ok(h)
    }
}

/// Closed-form coefficients of the two-site Hamiltonian in the rotated modes.
///
/// Each same-spin pair contributes `a† A a` with `A = [[ω_i, h], [h̄, ω_j]]`;
/// substituting `a = N ã` gives `ã† (N† A N) ã`. The interaction follows from
/// writing `n_1 = (S − E)/2`, `n_3 = (S + E)/2`.
pub fn two_site_conjugated_hamiltonian(model: &TwoSiteModel, basis: RotationBasis) -> ConjugatedTable {
    let nmap = basis.inverse_mode_map();
    let block = |wi: f64, wj: f64, h: C64| {
        let a = Matrix2::new(C64::new(wi, 0.0), h, h.conj(), C64::new(wj, 0.0));
        nmap.adjoint() * a * nmap
    };
    let b13 = block(model.omega[0], model.omega[2], model.h13);
    let b24 = block(model.omega[1], model.omega[3], model.h24);
    ConjugatedTable {
        basis,
        number: [b13[(0, 0)].re, b24[(0, 0)].re, b13[(1, 1)].re, b24[(1, 1)].re],
        exchange13: b13[(0, 1)],
        exchange24: b24[(0, 1)],
        quartic_sum: model.xi12 + model.xi34,
        quartic_diff: model.xi34 - model.xi12,
    }
}

/// Dense assembly of the Hubbard Hamiltonian by summing products of
/// elementary operator matrices. Slow; used as an independent reference.
pub fn assemble_from_operators(model: &HubbardModel, layout: ModeLayout) -> Result<OperatorMatrix> {
    let mut h = OperatorMatrix::zeros(layout);
    let n = |m: usize| -> Result<OperatorMatrix> {
        Ok(creation_op(layout, m)?.matmul(&annihilation_op(layout, m)?))
    };
    for site in 0..model.n_sites() {
        let nu = n(2 * site)?;
        let nd = n(2 * site + 1)?;
        h = h.plus(&nu.scale(C64::new(model.chemical[site][0], 0.0)));
        h = h.plus(&nd.scale(C64::new(model.chemical[site][1], 0.0)));
        h = h.plus(&nu.matmul(&nd).scale(C64::new(model.onsite[site], 0.0)));
    }
    for (e, &(i, j)) in model.graph.edges().iter().enumerate() {
        for spin in Spin::BOTH {
            let hij = model.hopping[e][spin.index()];
            let mi = 2 * i + spin.index();
            let mj = 2 * j + spin.index();
            let term = creation_op(layout, mi)?.matmul(&annihilation_op(layout, mj)?);
            h = h.plus(&term.scale(hij)).plus(&term.dagger().scale(hij.conj()));
        }
    }
    Ok(h)
}

/// Dense Hermitian eigenvalues, ascending.
pub fn eigenvalues(op: &OperatorMatrix) -> Vec<f64> {
    let m: DMatrix<C64> = op.entries.clone();
    let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{total_number_op, Spin};

    fn single_site(w1: f64, w2: f64, xi: f64) -> HubbardModel {
        let mut m = HubbardModel::zero(InteractionGraph::new(1, &[]).unwrap(), 1.0);
        m.chemical[0] = [w1, w2];
        m.onsite[0] = xi;
        m
    }

    #[test]
    fn zero_model_gives_zero_matrix() {
        let m = HubbardModel::zero(InteractionGraph::chain(2), 1.0);
        let h = build_hamiltonian(&m, ModeLayout::for_sites(2, 0).unwrap()).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn single_site_spectrum() {
        let m = single_site(0.3, -0.5, 0.7);
        let h = build_hamiltonian(&m, ModeLayout::for_sites(1, 0).unwrap()).unwrap();
        let ev = eigenvalues(&h);
        let expect = [-0.5, 0.0, 0.3, 0.5];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn chain_matches_operator_sum() {
        let g = InteractionGraph::chain(2);
        let mut m = random_model(&g, 3, 1.0);
        for h in m.hopping.iter_mut().flatten() {
            h.im = 0.0;
        }
        let l = ModeLayout::for_sites(2, 0).unwrap();
        let fast = build_hamiltonian(&m, l).unwrap();
        let slow = assemble_from_operators(&m, l).unwrap();
        assert!(fast.max_abs_diff(&slow) <= 1e-13);
        // complex hopping too
        let m = random_model(&InteractionGraph::chain(3), 5, 1.0);
        let l = ModeLayout::for_sites(3, 1).unwrap();
        let fast = build_hamiltonian(&m, l).unwrap();
        let slow = assemble_from_operators(&m, l).unwrap();
        assert!(fast.max_abs_diff(&slow) <= 1e-13);
    }

    #[test]
    fn number_conservation_and_hermiticity() {
        let m = random_model(&InteractionGraph::ring(3), 11, 1.0);
        let l = ModeLayout::for_sites(3, 0).unwrap();
        let h = build_hamiltonian(&m, l).unwrap();
        assert!(h.hermitian_deviation() <= 1e-12);
        let n = total_number_op(l, &(0..6).collect::<Vec<_>>()).unwrap();
        assert!(h.commutator(&n).max_abs() <= 1e-12);
    }

    #[test]
    fn random_model_is_deterministic_and_bounded() {
        let g = InteractionGraph::random_bounded_degree(6, 3, 1);
        assert_eq!(random_model(&g, 9, 1.0), random_model(&g, 9, 1.0));
        for seed in 0..1000 {
            let m = random_model(&g, seed, 0.8);
            assert!(m.max_coefficient() <= 0.8 + 1e-15);
            m.validate().unwrap();
        }
    }

    #[test]
    fn out_of_bound_coefficient_rejected() {
        let m = single_site(1.5, 0.0, 0.0);
        assert!(matches!(
            build_hamiltonian(&m, ModeLayout::for_sites(1, 0).unwrap()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let m = random_model(&InteractionGraph::ring(4), 77, 1.0);
        let back = HubbardModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn reversed_hopping_entry_is_conjugated() {
        let text = r#"{"n_sites":2,"edges":[[1,0]],
            "hopping":[{"i":1,"j":0,"spin":"up","re":0.1,"im":0.2}],
            "chemical":[],"onsite":[],"lambda_max":1.0}"#;
        let m = HubbardModel::from_json(text).unwrap();
        assert_eq!(m.hopping_amplitude(0, 1, Spin::Up), Some(C64::new(0.1, -0.2)));
    }

    #[test]
    fn table_first_line_example() {
        let m = TwoSiteModel {
            h13: C64::new(0.4, 0.0),
            h24: ZERO,
            omega: [0.25, 0.0, 0.25, 0.0],
            xi12: 0.0,
            xi34: 0.0,
        };
        let t = two_site_conjugated_hamiltonian(&m, RotationBasis::Uy);
        assert!((t.number[0] - 0.65).abs() < 1e-15);
        let z = TwoSiteModel { h13: ZERO, h24: ZERO, omega: [0.0; 4], xi12: 0.0, xi34: 0.0 };
        let t = two_site_conjugated_hamiltonian(&z, RotationBasis::Ux);
        assert!(t.number.iter().all(|&x| x == 0.0));
        assert_eq!(t.exchange13, ZERO);
    }

    #[test]
    fn im_table_exposes_imaginary_part() {
        let m = TwoSiteModel::random(4, 1.0);
        let t = two_site_conjugated_hamiltonian(&m, RotationBasis::Ux);
        assert!((t.number[0] - (m.p() - m.h13.im)).abs() < 1e-14);
        assert!((t.number[2] - (m.p() + m.h13.im)).abs() < 1e-14);
        assert!((t.number[1] - (m.q() - m.h24.im)).abs() < 1e-14);
        let t = two_site_conjugated_hamiltonian(&m, RotationBasis::Uy);
        assert!((t.number[0] - (m.p() + m.h13.re)).abs() < 1e-14);
        assert!((t.exchange13.re - (m.omega[2] - m.omega[0]) / 2.0).abs() < 1e-14);
        assert!((t.exchange13.im - m.h13.im).abs() < 1e-14);
    }
}
