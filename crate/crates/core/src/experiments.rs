//! Single experiments: the catalogue of probe / reshaping / unrotation
//! recipes, shot simulation with additive SPAM bias, and the joint outcome
//! machinery used when several experiments share one shot.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dynamics::{
    diagonal_weights, evolve_reshaped_with, AveragedEvolver, Distribution, Propagator, ReshapeConfig,
};
use crate::error::{Error, Result};
use crate::flo::{apply_gates, conjugate_density, prepare_joint_probe, FloGate, ProbeSpec, PREP_ANGLE, ROTATION_ANGLE};
use crate::fock::{extract_pattern, parity_of, ModeLayout, Parity, Spin, StateVector, C64};
use crate::model::{build_hamiltonian, Coefficient, HubbardModel};

/// Largest additive bias accepted by [`SpamModel::validate`].
pub const SPAM_CAP: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentType {
    /// Success probability `½(1 + cos φt)`.
    Type0,
    /// Success probability `½(1 + sin φt)`.
    TypePlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ancilla,
    AncillaFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HopPart {
    Re,
    Im,
}

/// What an experiment pair measures. Hopping targets take `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Omega { site: usize, spin: Spin },
    Xi { site: usize },
    Hopping { i: usize, j: usize, spin: Spin, part: HopPart },
    /// Both spins rotated at once; phase `p + q + r ± (…13 + …24)`.
    HopSum { i: usize, j: usize, part: HopPart },
    /// Odd probe over both spins; phase `q − p ± (…24 − …13)`.
    HopDiff { i: usize, j: usize, part: HopPart },
}

/// Linear combination of model coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseExpr {
    pub terms: Vec<(Coefficient, f64)>,
}

impl PhaseExpr {
    pub fn single(c: Coefficient) -> Self {
        Self { terms: vec![(c, 1.0)] }
    }

    pub fn add(mut self, c: Coefficient, w: f64) -> Self {
        if let Some(t) = self.terms.iter_mut().find(|(k, _)| *k == c) {
            t.1 += w;
        } else {
            self.terms.push((c, w));
        }
        self
    }

    pub fn evaluate(&self, model: &HubbardModel) -> Result<f64> {
        self.terms
            .iter()
            .map(|&(c, w)| {
                model
                    .value(c)
                    .map(|v| w * v)
                    .ok_or_else(|| Error::Validation(format!("model has no coefficient {c}")))
            })
            .sum()
    }

    /// Bound on `|phase|` given `|coefficient| ≤ λ` for every coefficient.
    pub fn bound(&self, lambda: f64) -> f64 {
        self.terms.iter().map(|(_, w)| w.abs()).sum::<f64>() * lambda
    }
}

/// Recipe of one experiment pair, independent of evolution time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTemplate {
    pub target: Target,
    pub variant: Variant,
    pub probe: ProbeSpec,
    /// Cluster-internal reshaping (spectator phases are added by the caller).
    pub reshaping: Distribution,
    pub unrotation_type0: Vec<FloGate>,
    pub unrotation_plus: Vec<FloGate>,
    pub measured_modes: Vec<usize>,
    pub success_bits: Vec<bool>,
    pub phase: PhaseExpr,
    /// Multiplier on the RPE base time `π/(4λ)`.
    pub time_scale: f64,
}

impl ExperimentTemplate {
    pub fn unrotation(&self, ty: ExperimentType) -> &[FloGate] {
        match ty {
            ExperimentType::Type0 => &self.unrotation_type0,
            ExperimentType::TypePlus => &self.unrotation_plus,
        }
    }

    /// Every mode the experiment touches (probe, rotations, measurement).
    pub fn modes(&self) -> Vec<usize> {
        let mut m = self.probe.modes();
        for g in self.unrotation_type0.iter().chain(&self.unrotation_plus) {
            m.extend(g.modes.iter().copied());
        }
        m.extend(self.measured_modes.iter().copied());
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn success_pattern(&self) -> usize {
        self.success_bits
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &b)| if b { acc | (1 << k) } else { acc })
    }
}

fn pair_gate(pair: bool, ty: ExperimentType, i: usize, j: usize) -> FloGate {
    match (pair, ty) {
        (true, ExperimentType::Type0) => FloGate::v(i, j, PREP_ANGLE),
        (true, ExperimentType::TypePlus) => FloGate::w(i, j, PREP_ANGLE),
        (false, ExperimentType::Type0) => FloGate::v_prime(i, j, PREP_ANGLE),
        (false, ExperimentType::TypePlus) => FloGate::w_prime(i, j, PREP_ANGLE),
    }
}

/// Undo the probe: inverse rotations in reverse, then `V†`/`W†` (or primed).
fn unrotation_chain(pair: bool, ty: ExperimentType, i: usize, j: usize, rotations: &[FloGate]) -> Vec<FloGate> {
    let mut out: Vec<FloGate> = rotations.iter().rev().map(FloGate::inverse).collect();
    out.push(pair_gate(pair, ty, i, j).inverse());
    out
}

fn rotation(part: HopPart, i: usize, j: usize) -> FloGate {
    match part {
        HopPart::Re => FloGate::uy(i, j, ROTATION_ANGLE),
        HopPart::Im => FloGate::ux(i, j, ROTATION_ANGLE),
    }
}

fn half_angle(part: HopPart, pairs: &[(usize, usize)]) -> Distribution {
    match part {
        HopPart::Re => Distribution::ux_half_angle(pairs),
        HopPart::Im => Distribution::uy_half_angle(pairs),
    }
}

fn hop_coefficient(part: HopPart, i: usize, j: usize, spin: Spin) -> Coefficient {
    match part {
        HopPart::Re => Coefficient::ReHop { i, j, spin },
        HopPart::Im => Coefficient::ImHop { i, j, spin },
    }
}

/// Sign of the hopping part in the rotated number coefficient.
fn hop_sign(part: HopPart) -> f64 {
    match part {
        HopPart::Re => 1.0,
        HopPart::Im => -1.0,
    }
}

/// `(ω_iσ + ω_jσ)/2`.
fn mean_omega(i: usize, j: usize, spin: Spin) -> PhaseExpr {
    PhaseExpr::default()
        .add(Coefficient::Omega { site: i, spin }, 0.5)
        .add(Coefficient::Omega { site: j, spin }, 0.5)
}

/// Build the recipe for `target`. `ancilla` is an ancilla index of the
/// layout, required by the ancilla variants and ignored otherwise.
pub fn template_for(
    target: Target,
    variant: Variant,
    layout: ModeLayout,
    ancilla: Option<usize>,
) -> Result<ExperimentTemplate> {
    let unsupported = || Error::UnsupportedExperiment(format!("{target:?} has no {variant:?} variant"));
    let anc_mode = || -> Result<usize> {
        let k = ancilla.ok_or_else(|| Error::Validation(format!("{target:?} needs an ancilla")))?;
        layout.ancilla_mode(k)
    };
    let check_edge = |i: usize, j: usize| -> Result<()> {
        if i >= j {
            return Err(Error::Validation(format!("hopping target needs i < j, got ({i}, {j})")));
        }
        Ok(())
    };
    let both = |pair: bool, i: usize, j: usize, rot: &[FloGate]| {
        (
            unrotation_chain(pair, ExperimentType::Type0, i, j, rot),
            unrotation_chain(pair, ExperimentType::TypePlus, i, j, rot),
        )
    };
    let t = match (target, variant) {
        (Target::Omega { site, spin }, Variant::Ancilla) => {
            let m = layout.site_mode(site, spin)?;
            let b = anc_mode()?;
            let (u0, up) = both(true, m, b, &[]);
            ExperimentTemplate {
                target,
                variant,
                probe: ProbeSpec::gaussian_pair(m, b),
                reshaping: Distribution::single_mode_phase(m),
                unrotation_type0: u0,
                unrotation_plus: up,
                measured_modes: vec![m, b],
                success_bits: vec![false, false],
                phase: PhaseExpr::single(Coefficient::Omega { site, spin }),
                time_scale: 1.0,
            }
        }
        (Target::Omega { site, spin: Spin::Down }, Variant::AncillaFree) => {
            let up = layout.site_mode(site, Spin::Up)?;
            let dn = layout.site_mode(site, Spin::Down)?;
            let (u0, upl) = both(false, up, dn, &[]);
            ExperimentTemplate {
                target,
                variant,
                probe: ProbeSpec::odd_single(up, dn),
                reshaping: Distribution::site_pair_phase(&[up, dn]),
                unrotation_type0: u0,
                unrotation_plus: upl,
                measured_modes: vec![up, dn],
                success_bits: vec![true, false],
                phase: PhaseExpr::single(Coefficient::Omega { site, spin: Spin::Down })
                    .add(Coefficient::Omega { site, spin: Spin::Up }, -1.0),
                time_scale: 1.0,
            }
        }
        (Target::Omega { spin: Spin::Up, .. }, Variant::AncillaFree) => return Err(unsupported()),
        (Target::Xi { site }, _) => {
            let up = layout.site_mode(site, Spin::Up)?;
            let dn = layout.site_mode(site, Spin::Down)?;
            let (u0, upl) = both(true, up, dn, &[]);
            ExperimentTemplate {
                target,
                variant,
                probe: ProbeSpec::gaussian_pair(up, dn),
                reshaping: Distribution::site_pair_phase(&[up, dn]),
                unrotation_type0: u0,
                unrotation_plus: upl,
                measured_modes: vec![up, dn],
                success_bits: vec![false, false],
                phase: PhaseExpr::single(Coefficient::Xi { site })
                    .add(Coefficient::Omega { site, spin: Spin::Up }, 1.0)
                    .add(Coefficient::Omega { site, spin: Spin::Down }, 1.0),
                time_scale: 1.0,
            }
        }
        (Target::Hopping { i, j, spin, part }, Variant::Ancilla) => {
            check_edge(i, j)?;
            let mi = layout.site_mode(i, spin)?;
            let mj = layout.site_mode(j, spin)?;
            let b = anc_mode()?;
            let rot = vec![rotation(part, mi, mj)];
            let (u0, up) = both(true, mi, b, &rot);
            ExperimentTemplate {
                target,
                variant,
                probe: ProbeSpec::gaussian_pair(mi, b).rotated(rot),
                reshaping: half_angle(part, &[(mi, mj)]),
                unrotation_type0: u0,
                unrotation_plus: up,
                measured_modes: vec![mi, b],
                success_bits: vec![false, false],
                phase: mean_omega(i, j, spin).add(hop_coefficient(part, i, j, spin), hop_sign(part)),
                time_scale: 1.0,
            }
        }
        (Target::Hopping { .. }, Variant::AncillaFree) => return Err(unsupported()),
        (Target::HopSum { i, j, part } | Target::HopDiff { i, j, part }, Variant::AncillaFree) => {
            check_edge(i, j)?;
            let (iu, id) = (layout.site_mode(i, Spin::Up)?, layout.site_mode(i, Spin::Down)?);
            let (ju, jd) = (layout.site_mode(j, Spin::Up)?, layout.site_mode(j, Spin::Down)?);
            let rot = vec![rotation(part, iu, ju), rotation(part, id, jd)];
            let sum = matches!(target, Target::HopSum { .. });
            let (u0, up) = both(sum, iu, id, &rot);
            let base = if sum { ProbeSpec::gaussian_pair(iu, id) } else { ProbeSpec::odd_single(iu, id) };
            let s = hop_sign(part);
            let hu = hop_coefficient(part, i, j, Spin::Up);
            let hd = hop_coefficient(part, i, j, Spin::Down);
            let mut phase = mean_omega(i, j, Spin::Down);
            if sum {
                for c in mean_omega(i, j, Spin::Up).terms {
                    phase = phase.add(c.0, c.1);
                }
                phase = phase
                    .add(Coefficient::Xi { site: i }, 0.25)
                    .add(Coefficient::Xi { site: j }, 0.25)
                    .add(hu, s)
                    .add(hd, s);
            } else {
                for c in mean_omega(i, j, Spin::Up).terms {
                    phase = phase.add(c.0, -c.1);
                }
                phase = phase.add(hd, s).add(hu, -s);
            }
            ExperimentTemplate {
                target,
                variant,
                probe: base.rotated(rot),
                reshaping: half_angle(part, &[(iu, ju), (id, jd)]),
                unrotation_type0: u0,
                unrotation_plus: up,
                measured_modes: vec![iu, id],
                success_bits: if sum { vec![false, false] } else { vec![true, false] },
                phase,
                time_scale: 0.5,
            }
        }
        (Target::HopSum { .. } | Target::HopDiff { .. }, Variant::Ancilla) => return Err(unsupported()),
    };
    for g in t.probe.gates().iter().chain(&t.unrotation_type0).chain(&t.unrotation_plus) {
        g.validate(layout)?;
    }
    t.reshaping.validate(layout)?;
    Ok(t)
}

/// Additive bias on the success probability of each experiment type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpamModel {
    pub delta0: f64,
    pub deltaplus: f64,
}

impl SpamModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for d in [self.delta0, self.deltaplus] {
            if !d.is_finite() || d.abs() > SPAM_CAP {
                return Err(Error::Validation(format!("SPAM bias {d} outside ±{SPAM_CAP}")));
            }
        }
        Ok(())
    }

    pub fn delta(&self, ty: ExperimentType) -> f64 {
        match ty {
            ExperimentType::Type0 => self.delta0,
            ExperimentType::TypePlus => self.deltaplus,
        }
    }

    pub fn biased(&self, ty: ExperimentType, p: f64) -> f64 {
        (p + self.delta(ty)).clamp(0.0, 1.0)
    }
}

/// One fully specified experiment at a fixed evolution time.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub template: ExperimentTemplate,
    pub model: Arc<HubbardModel>,
    pub layout: ModeLayout,
    pub t: f64,
    /// Reshaping steps; `0` evolves exactly without reshaping.
    pub r: usize,
    /// Full reshaping distribution (cluster part plus any spectators).
    pub distribution: Distribution,
    pub type_tag: ExperimentType,
}

impl ExperimentPlan {
    pub fn unrotation(&self) -> &[FloGate] {
        self.template.unrotation(self.type_tag)
    }

    fn reshaped(&self) -> bool {
        self.r > 0 && !self.distribution.is_trivial()
    }

    /// FLO unitaries one shot consumes: preparation, unrotation and `2r`
    /// reshaping unitaries.
    pub fn flo_per_shot(&self) -> usize {
        let reshape = if self.reshaped() { 2 * self.r } else { 0 };
        self.template.probe.gates().len() + self.unrotation().len() + reshape
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout.n_system_modes() != 2 * self.model.n_sites() {
            return Err(Error::Validation("layout does not match the model".into()));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::Validation(format!("evolution time {} must be finite and nonnegative", self.t)));
        }
        self.distribution.validate(self.layout)?;
        for g in self.template.probe.gates().iter().chain(self.unrotation()) {
            g.validate(self.layout)?;
        }
        Ok(())
    }
}

/// Type-0 and Type-+ plans for one target at time `t` with `r` steps.
pub fn plan_for_coefficient(
    target: Target,
    model: Arc<HubbardModel>,
    layout: ModeLayout,
    ancilla: Option<usize>,
    variant: Variant,
    t: f64,
    r: usize,
) -> Result<(ExperimentPlan, ExperimentPlan)> {
    let template = template_for(target, variant, layout, ancilla)?;
    let plan = |type_tag| ExperimentPlan {
        distribution: template.reshaping.clone(),
        template: template.clone(),
        model: model.clone(),
        layout,
        t,
        r,
        type_tag,
    };
    let p0 = plan(ExperimentType::Type0);
    p0.validate()?;
    Ok((p0, plan(ExperimentType::TypePlus)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub success: bool,
    pub evolution_time_consumed: f64,
    pub flo_unitaries_used: usize,
}

fn success_weight(state: &StateVector, modes: &[usize], pattern: usize) -> f64 {
    state
        .amplitudes
        .iter()
        .enumerate()
        .filter(|(b, _)| extract_pattern(*b, modes) == pattern)
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

/// One shot with freshly sampled reshaping angles. The outcome is drawn from
/// the Born probability of this trajectory plus the SPAM bias, clamped.
pub fn run_shot(plan: &ExperimentPlan, spam: &SpamModel, seed: u64) -> Result<ShotResult> {
    plan.validate()?;
    spam.validate()?;
    let h = build_hamiltonian(&plan.model, plan.layout)?;
    let prop = Propagator::new(&h)?;
    let psi = prepare_joint_probe(std::slice::from_ref(&plan.template.probe), plan.layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let evolved = if plan.reshaped() {
        let cfg = ReshapeConfig { r: plan.r, distribution: plan.distribution.clone(), rng_seed: rng.gen() };
        evolve_reshaped_with(&psi, &prop, plan.t, &cfg)?
    } else {
        prop.evolve(&psi, plan.t)
    };
    let out = apply_gates(plan.unrotation(), &evolved)?;
    let p = success_weight(&out, &plan.template.measured_modes, plan.template.success_pattern());
    let p = spam.biased(plan.type_tag, p);
    Ok(ShotResult {
        success: rng.gen::<f64>() < p,
        evolution_time_consumed: plan.t,
        flo_unitaries_used: plan.flo_per_shot(),
    })
}

/// Success probability of the plan averaged over reshaping angles (no SPAM).
pub fn success_probability(plan: &ExperimentPlan) -> Result<f64> {
    plan.validate()?;
    let round = ParallelRound::new(vec![plan.template.clone()], plan.distribution.clone())?;
    let h_sys = build_hamiltonian(&plan.model, plan.layout.system_only())?;
    let evolver = AveragedEvolver::new(&h_sys, &round.distribution)?;
    let joint = joint_outcomes(&evolver, &round, plan.layout, plan.t, plan.r)?;
    Ok(joint.success_probability(0, plan.type_tag))
}

/// Several experiments on disjoint modes sharing every shot.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelRound {
    pub experiments: Vec<ExperimentTemplate>,
    /// Full reshaping distribution applied to the whole register.
    pub distribution: Distribution,
}

impl ParallelRound {
    pub fn new(experiments: Vec<ExperimentTemplate>, distribution: Distribution) -> Result<Self> {
        let mut seen: Vec<usize> = Vec::new();
        for e in &experiments {
            for m in e.modes() {
                if seen.contains(&m) {
                    return Err(Error::Validation(format!("experiments overlap on mode {m}")));
                }
                seen.push(m);
            }
        }
        Ok(Self { experiments, distribution })
    }

    /// Union of measured modes, in experiment order.
    pub fn measured_modes(&self) -> Vec<usize> {
        self.experiments.iter().flat_map(|e| e.measured_modes.iter().copied()).collect()
    }

    pub fn flo_per_shot(&self, r: usize) -> usize {
        let reshape = if r > 0 && !self.distribution.is_trivial() { 2 * r } else { 0 };
        self.experiments
            .iter()
            .map(|e| e.probe.gates().len() + e.unrotation_type0.len())
            .sum::<usize>()
            + reshape
    }

    pub fn probe_state(&self, layout: ModeLayout) -> Result<StateVector> {
        let probes: Vec<ProbeSpec> = self.experiments.iter().map(|e| e.probe.clone()).collect();
        prepare_joint_probe(&probes, layout)
    }
}

/// Joint outcome probabilities of a round at one evolution time, for both
/// experiment types, indexed by the pattern on [`ParallelRound::measured_modes`].
#[derive(Clone, Debug, PartialEq)]
pub struct JointOutcomes {
    pub type0: Vec<f64>,
    pub plus: Vec<f64>,
    /// Per experiment: bit offset into the pattern, width, and success pattern.
    slots: Vec<(usize, usize, usize)>,
    pub parity: RoundParity,
}

/// Parity of the state at each point of a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundParity {
    pub probe: Parity,
    pub evolved: Parity,
    pub unrotated_type0: Parity,
    pub unrotated_plus: Parity,
}

impl RoundParity {
    pub fn all(&self) -> [Parity; 4] {
        [self.probe, self.evolved, self.unrotated_type0, self.unrotated_plus]
    }

    pub fn is_definite(&self) -> bool {
        self.all().iter().all(|p| p.is_definite())
    }
}

impl JointOutcomes {
    fn probs(&self, ty: ExperimentType) -> &[f64] {
        match ty {
            ExperimentType::Type0 => &self.type0,
            ExperimentType::TypePlus => &self.plus,
        }
    }

    pub fn n_experiments(&self) -> usize {
        self.slots.len()
    }

    /// Whether experiment `k` succeeds for a joint outcome pattern.
    pub fn succeeded(&self, k: usize, pattern: usize) -> bool {
        let (off, width, want) = self.slots[k];
        (pattern >> off) & ((1 << width) - 1) == want
    }

    /// Marginal success probability of experiment `k`.
    pub fn success_probability(&self, k: usize, ty: ExperimentType) -> f64 {
        self.probs(ty)
            .iter()
            .enumerate()
            .filter(|(p, _)| self.succeeded(k, *p))
            .map(|(_, w)| w)
            .sum()
    }

    /// Draw `shots` joint outcomes and return per-experiment success counts.
    /// SPAM enters as an independent flip of each experiment's success bit,
    /// which moves every marginal to `clamp(p + δ)`.
    pub fn sample<R: Rng>(&self, ty: ExperimentType, shots: u64, spam: &SpamModel, rng: &mut R) -> Vec<u64> {
        let probs = self.probs(ty);
        let cumulative: Vec<f64> = probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p.max(0.0);
                Some(*acc)
            })
            .collect();
        let total = cumulative.last().copied().unwrap_or(0.0);
        let delta = spam.delta(ty);
        let flips: Vec<(bool, f64)> = (0..self.n_experiments())
            .map(|k| {
                let p = self.success_probability(k, ty).clamp(0.0, 1.0);
                if delta >= 0.0 {
                    (true, if p < 1.0 { (delta / (1.0 - p)).min(1.0) } else { 0.0 })
                } else {
                    (false, if p > 0.0 { (-delta / p).min(1.0) } else { 0.0 })
                }
            })
            .collect();
        let mut counts = vec![0u64; self.n_experiments()];
        for _ in 0..shots {
            let u = rng.gen::<f64>() * total;
            let pattern = cumulative.partition_point(|&c| c <= u).min(probs.len() - 1);
            for (k, c) in counts.iter_mut().enumerate() {
                let mut s = self.succeeded(k, pattern);
                let (to_success, f) = flips[k];
                if s != to_success && f > 0.0 && rng.gen::<f64>() < f {
                    s = to_success;
                }
                if s {
                    *c += 1;
                }
            }
        }
        counts
    }
}

pub fn density_parity(rho: &DMatrix<C64>) -> Parity {
    let (mut even, mut odd) = (0.0, 0.0);
    for (b, w) in diagonal_weights(rho).into_iter().enumerate() {
        if b.count_ones() % 2 == 0 {
            even += w;
        } else {
            odd += w;
        }
    }
    match (even > 1e-10, odd > 1e-10) {
        (true, true) => Parity::Mixed,
        (false, true) => Parity::Odd,
        _ => Parity::Even,
    }
}

/// Exact reshaping-averaged joint outcome distribution of a round.
pub fn joint_outcomes(
    evolver: &AveragedEvolver,
    round: &ParallelRound,
    layout: ModeLayout,
    t: f64,
    r: usize,
) -> Result<JointOutcomes> {
    let psi = round.probe_state(layout)?;
    let probe_parity = parity_of(&psi);
    if probe_parity == Parity::Mixed {
        return Err(Error::Validation("probe state has mixed parity".into()));
    }
    let rho = evolver.averaged_density(&psi, t, r)?;
    let evolved_parity = density_parity(&rho);
    let modes = round.measured_modes();
    let mut slots = Vec::new();
    let mut off = 0;
    for e in &round.experiments {
        slots.push((off, e.measured_modes.len(), e.success_pattern()));
        off += e.measured_modes.len();
    }
    let mut out = [Vec::new(), Vec::new()];
    let mut parity = [Parity::Even; 2];
    for (k, ty) in [ExperimentType::Type0, ExperimentType::TypePlus].into_iter().enumerate() {
        let mut m = rho.clone();
        for e in &round.experiments {
            for g in e.unrotation(ty) {
                conjugate_density(g, layout, &mut m)?;
            }
        }
        parity[k] = density_parity(&m);
        let mut probs = vec![0.0; 1 << modes.len()];
        for (b, w) in diagonal_weights(&m).into_iter().enumerate() {
            probs[extract_pattern(b, &modes)] += w;
        }
        out[k] = probs;
    }
    let [type0, plus] = out;
    let parity = RoundParity {
        probe: probe_parity,
        evolved: evolved_parity,
        unrotated_type0: parity[0],
        unrotated_plus: parity[1],
    };
    Ok(JointOutcomes { type0, plus, slots, parity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionGraph;

    fn single_site(w_up: f64, w_dn: f64, xi: f64) -> Arc<HubbardModel> {
        let mut m = HubbardModel::zero(InteractionGraph::new(1, &[]).unwrap(), 2.0);
        m.chemical[0] = [w_up, w_dn];
        m.onsite[0] = xi;
        Arc::new(m)
    }

    #[test]
    fn zero_time_type0_always_succeeds() {
        let layout = ModeLayout::for_sites(1, 1).unwrap();
        let (p0, _) = plan_for_coefficient(
            Target::Omega { site: 0, spin: Spin::Up },
            single_site(0.7, 0.1, 0.2),
            layout,
            Some(0),
            Variant::Ancilla,
            0.0,
            0,
        )
        .unwrap();
        for seed in 0..50 {
            assert!(run_shot(&p0, &SpamModel::none(), seed).unwrap().success);
        }
    }

    #[test]
    fn first_spin_frequency_matches_cosine() {
        let layout = ModeLayout::for_sites(1, 1).unwrap();
        let (p0, pp) = plan_for_coefficient(
            Target::Omega { site: 0, spin: Spin::Up },
            single_site(0.7, 0.1, 0.2),
            layout,
            Some(0),
            Variant::Ancilla,
            1.0,
            0,
        )
        .unwrap();
        let expect = 0.5 * (1.0 + 0.7f64.cos());
        assert!((success_probability(&p0).unwrap() - expect).abs() < 1e-12);
        assert!((success_probability(&pp).unwrap() - 0.5 * (1.0 + 0.7f64.sin())).abs() < 1e-12);
        let n = 100_000u64;
        let hits = (0..n).filter(|&s| run_shot(&p0, &SpamModel::none(), s).unwrap().success).count();
        let freq = hits as f64 / n as f64;
        let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((freq - expect).abs() < 3.0 * sigma, "{freq} vs {expect}");
    }

    #[test]
    fn spam_shifts_frequency() {
        let layout = ModeLayout::for_sites(1, 1).unwrap();
        let (p0, _) = plan_for_coefficient(
            Target::Omega { site: 0, spin: Spin::Up },
            single_site(1.3, 0.0, 0.0),
            layout,
            Some(0),
            Variant::Ancilla,
            1.0,
            0,
        )
        .unwrap();
        let n = 40_000u64;
        let freq = |spam: SpamModel| {
            (0..n).filter(|&s| run_shot(&p0, &spam, s).unwrap().success).count() as f64 / n as f64
        };
        let base = freq(SpamModel::none());
        let shifted = freq(SpamModel { delta0: 0.04, deltaplus: 0.0 });
        assert!((shifted - base - 0.04).abs() < 0.015, "{base} -> {shifted}");
    }

    #[test]
    fn unsupported_pairings() {
        let layout = ModeLayout::for_sites(2, 1).unwrap();
        for (t, v) in [
            (Target::Omega { site: 0, spin: Spin::Up }, Variant::AncillaFree),
            (Target::Hopping { i: 0, j: 1, spin: Spin::Up, part: HopPart::Re }, Variant::AncillaFree),
            (Target::HopSum { i: 0, j: 1, part: HopPart::Im }, Variant::Ancilla),
        ] {
            assert!(matches!(template_for(t, v, layout, Some(0)), Err(Error::UnsupportedExperiment(_))));
        }
        assert!(template_for(Target::Omega { site: 0, spin: Spin::Up }, Variant::Ancilla, layout, None).is_err());
    }

    #[test]
    fn catalogue_examples() {
        let layout = ModeLayout::for_sites(2, 1).unwrap();
        let t = template_for(Target::Omega { site: 0, spin: Spin::Up }, Variant::Ancilla, layout, Some(0)).unwrap();
        assert_eq!(t.probe, ProbeSpec::gaussian_pair(0, 4));
        assert_eq!(t.reshaping, Distribution::single_mode_phase(0));
        assert_eq!((t.measured_modes.clone(), t.success_bits.clone()), (vec![0, 4], vec![false, false]));

        let t = template_for(Target::Xi { site: 0 }, Variant::AncillaFree, layout, None).unwrap();
        assert_eq!(t.probe, ProbeSpec::gaussian_pair(0, 1));
        assert_eq!(t.phase.terms.len(), 3);

        let t = template_for(Target::HopSum { i: 0, j: 1, part: HopPart::Re }, Variant::AncillaFree, layout, None)
            .unwrap();
        assert_eq!(
            t.probe,
            ProbeSpec::gaussian_pair(0, 1).rotated(vec![FloGate::uy(0, 2, ROTATION_ANGLE), FloGate::uy(1, 3, ROTATION_ANGLE)])
        );
        assert_eq!(t.time_scale, 0.5);
        let mut m = HubbardModel::zero(InteractionGraph::chain(2), 1.0);
        m.chemical = vec![[0.1, 0.2], [0.3, 0.4]];
        m.onsite = vec![0.5, 0.6];
        m.set_hopping(0, 1, Spin::Up, C64::new(0.05, 0.07)).unwrap();
        m.set_hopping(0, 1, Spin::Down, C64::new(-0.02, 0.03)).unwrap();
        let p = 0.2;
        let q = 0.3;
        let r = 1.1 / 4.0;
        assert!((t.phase.evaluate(&m).unwrap() - (p + q + r + 0.05 - 0.02)).abs() < 1e-15);
    }

    #[test]
    fn joint_outcomes_factorize_for_decoupled_experiments() {
        let mut m = HubbardModel::zero(InteractionGraph::new(2, &[]).unwrap(), 1.0);
        m.chemical = vec![[0.4, -0.2], [0.9, 0.3]];
        m.onsite = vec![0.1, -0.5];
        let layout = ModeLayout::for_sites(2, 2).unwrap();
        let a = template_for(Target::Omega { site: 0, spin: Spin::Up }, Variant::Ancilla, layout, Some(0)).unwrap();
        let b = template_for(Target::Omega { site: 1, spin: Spin::Up }, Variant::Ancilla, layout, Some(1)).unwrap();
        let round = ParallelRound::new(vec![a, b], Distribution::trivial()).unwrap();
        let h = build_hamiltonian(&m, layout.system_only()).unwrap();
        let ev = AveragedEvolver::new(&h, &round.distribution).unwrap();
        let j = joint_outcomes(&ev, &round, layout, 1.3, 0).unwrap();
        assert!((j.success_probability(0, ExperimentType::Type0) - 0.5 * (1.0 + (0.4f64 * 1.3).cos())).abs() < 1e-12);
        assert!((j.success_probability(1, ExperimentType::TypePlus) - 0.5 * (1.0 + (0.9f64 * 1.3).sin())).abs() < 1e-12);
        assert_eq!(j.parity.all(), [Parity::Even; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let counts = j.sample(ExperimentType::Type0, 20_000, &SpamModel::none(), &mut rng);
        let expect = 0.5 * (1.0 + (0.9f64 * 1.3).cos());
        assert!((counts[1] as f64 / 20_000.0 - expect).abs() < 0.015);
        let biased = j.sample(ExperimentType::Type0, 20_000, &SpamModel { delta0: -0.05, deltaplus: 0.0 }, &mut rng);
        assert!((biased[1] as f64 / 20_000.0 - expect + 0.05).abs() < 0.015);
    }

    #[test]
    fn overlapping_round_rejected() {
        let layout = ModeLayout::for_sites(1, 2).unwrap();
        let a = template_for(Target::Omega { site: 0, spin: Spin::Up }, Variant::Ancilla, layout, Some(0)).unwrap();
        let b = template_for(Target::Xi { site: 0 }, Variant::AncillaFree, layout, None).unwrap();
        assert!(ParallelRound::new(vec![a, b], Distribution::trivial()).is_err());
    }

    #[test]
    fn catalogue_matches_closed_forms_under_effective_hamiltonian() {
        use crate::oracle::{exact_probability, ProbabilityQuery};
        let layout = ModeLayout::for_sites(2, 1).unwrap();
        let cases = [
            (Target::Omega { site: 0, spin: Spin::Up }, Variant::Ancilla),
            (Target::Omega { site: 1, spin: Spin::Down }, Variant::Ancilla),
            (Target::Omega { site: 1, spin: Spin::Down }, Variant::AncillaFree),
            (Target::Xi { site: 0 }, Variant::AncillaFree),
            (Target::Hopping { i: 0, j: 1, spin: Spin::Up, part: HopPart::Re }, Variant::Ancilla),
            (Target::Hopping { i: 0, j: 1, spin: Spin::Down, part: HopPart::Im }, Variant::Ancilla),
            (Target::HopSum { i: 0, j: 1, part: HopPart::Re }, Variant::AncillaFree),
            (Target::HopDiff { i: 0, j: 1, part: HopPart::Re }, Variant::AncillaFree),
            (Target::HopSum { i: 0, j: 1, part: HopPart::Im }, Variant::AncillaFree),
            (Target::HopDiff { i: 0, j: 1, part: HopPart::Im }, Variant::AncillaFree),
        ];
        for seed in 0..5 {
            let m = crate::model::random_model(&InteractionGraph::chain(2), seed, 1.0);
            let h = build_hamiltonian(&m, layout).unwrap();
            for (target, variant) in cases {
                let tpl = template_for(target, variant, layout, Some(0)).unwrap();
                let phase = tpl.phase.evaluate(&m).unwrap();
                for (ty, f) in [(ExperimentType::Type0, f64::cos as fn(f64) -> f64), (ExperimentType::TypePlus, f64::sin)] {
                    let q = ProbabilityQuery {
                        probe: prepare_joint_probe(std::slice::from_ref(&tpl.probe), layout).unwrap(),
                        hamiltonian: h.clone(),
                        t: 1.7,
                        averaged_over: Some(tpl.reshaping.clone()),
                        measurement_rotation: tpl.unrotation(ty).to_vec(),
                        outcome_modes: tpl.measured_modes.clone(),
                        outcome: tpl.success_bits.clone(),
                    };
                    let p = exact_probability(&q).unwrap();
                    let expect = 0.5 * (1.0 + f(phase * 1.7));
                    assert!((p - expect).abs() < 1e-9, "{target:?} {ty:?}: {p} vs {expect}");
                }
            }
        }
    }
}
