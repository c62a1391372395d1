//! The full learning protocol: distance-2 link coloring, round planning,
//! exact outcome preparation, seeded execution and the linear-combination
//! ledger that turns measured phases into model coefficients.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::dynamics::{steps_for, AveragedEvolver, Distribution};
use crate::error::{Error, Result};
use crate::experiments::{
    joint_outcomes, template_for, ExperimentTemplate, ExperimentType, HopPart, JointOutcomes, ParallelRound,
    PhaseExpr, SpamModel, Target, Variant,
};
use crate::fock::{ModeLayout, Spin};
use crate::model::{build_hamiltonian, Coefficient, HubbardModel, InteractionGraph, TwoSiteModel};
use crate::rpe::{
    estimate_phase, make_scaled_schedule, GenerationCount, PhaseEstimate, RpeSchedule, ShotRule,
    DEFAULT_MAX_GENERATIONS,
};

/// Reshaping constant: `r = ⌈c_r t²⌉` steps for evolution time `t`.
pub const DEFAULT_C_R: f64 = 50.0;

/// Colors of the link graph (vertices are edges of `G`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkColoring {
    pub edges: Vec<(usize, usize)>,
    /// Color of each edge, `0..n_colors`.
    pub colors: Vec<usize>,
    pub n_colors: usize,
}

impl LinkColoring {
    /// Edges grouped by color.
    pub fn classes(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.n_colors];
        for (e, &c) in self.edges.iter().zip(&self.colors) {
            out[c].push(*e);
        }
        out
    }

    /// Greedy bound `4(d − 1)² + 1` on the number of colors.
    pub fn bound(max_degree: usize) -> usize {
        let d = max_degree.max(1) - 1;
        4 * d * d + 1
    }

    /// Pairs of same-colored edges at link-graph distance ≤ 2, found by a
    /// breadth-first scan of the link graph.
    pub fn violations(&self) -> Vec<((usize, usize), (usize, usize))> {
        let n = self.edges.len();
        let touch = |a: (usize, usize), b: (usize, usize)| a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1;
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && touch(self.edges[i], self.edges[j])).collect())
            .collect();
        let mut bad = Vec::new();
        for i in 0..n {
            let mut near: BTreeSet<usize> = adj[i].iter().copied().collect();
            for &j in &adj[i] {
                near.extend(adj[j].iter().copied());
            }
            near.remove(&i);
            for j in near {
                if j > i && self.colors[i] == self.colors[j] {
                    bad.push((self.edges[i], self.edges[j]));
                }
            }
        }
        bad
    }
}

/// Greedy distance-2 coloring of the link graph, edges in sorted order.
pub fn color_links(graph: &InteractionGraph) -> LinkColoring {
    let edges = graph.edges().to_vec();
    let n = graph.n_sites();
    let mut nbr = vec![Vec::new(); n];
    for &(a, b) in &edges {
        nbr[a].push(b);
        nbr[b].push(a);
    }
    // Two edges conflict when an endpoint of one equals or neighbours an
    // endpoint of the other.
    let reach = |e: (usize, usize)| {
        let mut s: BTreeSet<usize> = [e.0, e.1].into();
        s.extend(nbr[e.0].iter().copied());
        s.extend(nbr[e.1].iter().copied());
        s
    };
    let mut colors: Vec<usize> = Vec::with_capacity(edges.len());
    for (k, &e) in edges.iter().enumerate() {
        let r = reach(e);
        let used: BTreeSet<usize> = edges[..k]
            .iter()
            .zip(&colors)
            .filter(|(f, _)| r.contains(&f.0) || r.contains(&f.1))
            .map(|(_, &c)| c)
            .collect();
        colors.push((0..).find(|c| !used.contains(c)).expect("a free color exists"));
    }
    let n_colors = colors.iter().map(|c| c + 1).max().unwrap_or(0);
    LinkColoring { edges, colors, n_colors }
}

/// One measured phase: `Σ w·coefficient`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub name: String,
    pub expr: PhaseExpr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStep {
    pub equations: Vec<usize>,
    pub solves: Vec<Coefficient>,
}

/// Measured phases and the order in which they determine the coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComboLedger {
    pub equations: Vec<Equation>,
    pub steps: Vec<SolveStep>,
}

/// A coefficient as a linear combination of measured phases.
pub type Expansion = BTreeMap<usize, f64>;

impl ComboLedger {
    pub fn push_equation(&mut self, name: String, expr: PhaseExpr) -> usize {
        self.equations.push(Equation { name, expr });
        self.equations.len() - 1
    }

    pub fn push_step(&mut self, equations: Vec<usize>, solves: Vec<Coefficient>) {
        self.steps.push(SolveStep { equations, solves });
    }

    /// Express every solved coefficient through the measured phases.
    pub fn expansions(&self) -> Result<BTreeMap<Coefficient, Expansion>> {
        let mut solved: BTreeMap<Coefficient, Expansion> = BTreeMap::new();
        for step in &self.steps {
            let k = step.solves.len();
            if k == 0 || step.equations.len() != k {
                return Err(Error::CyclicLedger(format!("step needs as many equations as unknowns: {step:?}")));
            }
            let mut a = DMatrix::<f64>::zeros(k, k);
            // rhs_e = raw_e − Σ known terms, as an expansion over raws.
            let mut rhs: Vec<Expansion> = Vec::with_capacity(k);
            for (row, &ei) in step.equations.iter().enumerate() {
                let eq = self
                    .equations
                    .get(ei)
                    .ok_or_else(|| Error::CyclicLedger(format!("no equation {ei}")))?;
                let mut r: Expansion = [(ei, 1.0)].into();
                for &(c, w) in &eq.expr.terms {
                    if let Some(col) = step.solves.iter().position(|&s| s == c) {
                        a[(row, col)] += w;
                    } else {
                        let known = solved.get(&c).ok_or_else(|| {
                            Error::CyclicLedger(format!("{} uses {c} before it is solved", eq.name))
                        })?;
                        for (&raw, &v) in known {
                            *r.entry(raw).or_insert(0.0) -= w * v;
                        }
                    }
                }
                rhs.push(r);
            }
            let inv = a
                .clone()
                .try_inverse()
                .filter(|m| m.iter().all(|x| x.is_finite()))
                .ok_or_else(|| Error::CyclicLedger(format!("singular step for {:?}", step.solves)))?;
            for (col, &sym) in step.solves.iter().enumerate() {
                if solved.contains_key(&sym) {
                    return Err(Error::CyclicLedger(format!("{sym} solved twice")));
                }
                let mut e = Expansion::new();
                for (row, r) in rhs.iter().enumerate() {
                    let f = inv[(col, row)];
                    if f != 0.0 {
                        for (&raw, &v) in r {
                            *e.entry(raw).or_insert(0.0) += f * v;
                        }
                    }
                }
                e.retain(|_, v| v.abs() > 1e-14);
                solved.insert(sym, e);
            }
        }
        Ok(solved)
    }

    /// Check that exactly the model's coefficients are solved.
    pub fn check_complete(&self, coefficients: &[Coefficient]) -> Result<()> {
        let solved = self.expansions()?;
        for c in coefficients {
            if !solved.contains_key(c) {
                return Err(Error::CyclicLedger(format!("{c} is never solved")));
            }
        }
        if let Some(extra) = solved.keys().find(|k| !coefficients.contains(k)) {
            return Err(Error::CyclicLedger(format!("{extra} is not a model coefficient")));
        }
        Ok(())
    }

    /// Target accuracy for each measured phase so that every propagated
    /// bound stays within `epsilon`: a phase entering combinations with
    /// total weight `k` is learned to `epsilon / k`.
    pub fn allocate(&self, epsilon: f64) -> Result<Vec<f64>> {
        let exp = self.expansions()?;
        let mut eps = vec![epsilon; self.equations.len()];
        for e in exp.values() {
            let l1: f64 = e.values().map(|v| v.abs()).sum();
            for &raw in e.keys() {
                eps[raw] = eps[raw].min(epsilon / l1.max(1.0));
            }
        }
        Ok(eps)
    }
}

/// A coefficient estimate with its propagated half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub value: f64,
    pub half_width: f64,
}

/// Solve the ledger from measured phases. Coefficients that depend on a
/// phase that was never measured are left out. Half-widths add with the
/// absolute weights of the combination.
pub fn combine_estimates(
    ledger: &ComboLedger,
    measured: &BTreeMap<usize, PhaseEstimate>,
) -> Result<BTreeMap<Coefficient, Combined>> {
    let mut out = BTreeMap::new();
    for (sym, e) in ledger.expansions()? {
        if e.keys().all(|k| measured.contains_key(k)) {
            let value = e.iter().map(|(k, w)| w * measured[k].value).sum();
            let half_width = e.iter().map(|(k, w)| w.abs() * measured[k].half_width).sum();
            out.insert(sym, Combined { value, half_width });
        }
    }
    Ok(out)
}

/// Variant choice per stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageVariants {
    pub omega_up: Variant,
    pub omega_down: Variant,
    pub hopping: Variant,
}

impl Default for StageVariants {
    fn default() -> Self {
        Self { omega_up: Variant::Ancilla, omega_down: Variant::AncillaFree, hopping: Variant::Ancilla }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub epsilon: f64,
    pub variants: StageVariants,
    pub c_r: f64,
    pub shot_rule: ShotRule,
    pub max_generations: usize,
    /// Cap on total evolution time; rounds that would exceed it are skipped.
    pub budget: Option<f64>,
}

impl LearnerConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            variants: StageVariants::default(),
            c_r: DEFAULT_C_R,
            shot_rule: ShotRule::default(),
            max_generations: DEFAULT_MAX_GENERATIONS,
            budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.c_r > 0.0 && self.c_r.is_finite()) {
            return Err(Error::Validation(format!("c_r must be positive, got {}", self.c_r)));
        }
        if let Some(b) = self.budget {
            if !(b >= 0.0) {
                return Err(Error::Validation(format!("budget must be nonnegative, got {b}")));
            }
        }
        Ok(())
    }
}

/// Experiments sharing shots, with their common RPE schedule.
#[derive(Clone, Debug)]
pub struct PlannedRound {
    pub label: String,
    pub color: Option<usize>,
    pub round: ParallelRound,
    /// Ledger equation of each experiment.
    pub equations: Vec<usize>,
    pub schedule: RpeSchedule,
    /// Whether evolution is reshaped (steps from `c_r`) or exact.
    pub reshaped: bool,
}

impl PlannedRound {
    pub fn steps(&self, t: f64, c_r: f64) -> usize {
        if self.reshaped {
            steps_for(t, c_r)
        } else {
            0
        }
    }
}

#[derive(Clone, Debug)]
pub struct LearnPlan {
    pub graph: InteractionGraph,
    pub layout: ModeLayout,
    pub coloring: LinkColoring,
    pub ledger: ComboLedger,
    pub rounds: Vec<PlannedRound>,
    pub config: LearnerConfig,
    pub lambda: f64,
}

impl LearnPlan {
    pub fn total_time(&self) -> f64 {
        self.rounds.iter().map(|r| r.schedule.total_time()).sum()
    }
}

fn target_label(t: &Target) -> String {
    let part = |p: &HopPart| match p {
        HopPart::Re => "re",
        HopPart::Im => "im",
    };
    match t {
        Target::Omega { site, spin } => format!("omega_{site}_{}", spin.arrow()),
        Target::Xi { site } => format!("pair_{site}"),
        Target::Hopping { i, j, spin, part: p } => format!("rot_{}_{i}_{j}_{}", part(p), spin.arrow()),
        Target::HopSum { i, j, part: p } => format!("sum_{}_{i}_{j}", part(p)),
        Target::HopDiff { i, j, part: p } => format!("diff_{}_{i}_{j}", part(p)),
    }
}

struct Builder<'a> {
    layout: ModeLayout,
    ledger: ComboLedger,
    rounds: Vec<(String, Option<usize>, Vec<ExperimentTemplate>, Vec<usize>, Distribution, bool)>,
    cfg: &'a LearnerConfig,
}

impl Builder<'_> {
    fn template(&self, target: Target, variant: Variant, ancilla: Option<usize>) -> Result<ExperimentTemplate> {
        template_for(target, variant, self.layout, ancilla)
    }

    /// Add a round; every experiment gets its own equation.
    fn round(
        &mut self,
        label: String,
        color: Option<usize>,
        templates: Vec<ExperimentTemplate>,
        spectators: &Distribution,
        reshaped: bool,
    ) -> Vec<usize> {
        if templates.is_empty() {
            return Vec::new();
        }
        let eqs: Vec<usize> = templates
            .iter()
            .map(|t| self.ledger.push_equation(target_label(&t.target), t.phase.clone()))
            .collect();
        let mut dist = Distribution::trivial();
        if reshaped {
            for t in &templates {
                dist = dist.and(t.reshaping.clone());
            }
            dist = dist.and(spectators.clone());
        }
        self.rounds.push((label, color, templates, eqs.clone(), dist, reshaped));
        eqs
    }

    /// Stages (a)-(c) for the listed sites; `ancillas[k]` serves `sites[k]`.
    fn site_stages(
        &mut self,
        tag: &str,
        color: Option<usize>,
        sites: &[(usize, usize)],
        spectators: &Distribution,
        reshaped: bool,
    ) -> Result<()> {
        let v = self.cfg.variants;
        let anc = |a: usize, var: Variant| (var == Variant::Ancilla).then_some(a);
        let ups: Vec<_> = sites
            .iter()
            .map(|&(s, a)| self.template(Target::Omega { site: s, spin: Spin::Up }, v.omega_up, anc(a, v.omega_up)))
            .collect::<Result<_>>()?;
        let eqs = self.round(format!("{tag}a omega up"), color, ups, spectators, reshaped);
        for (k, &(s, _)) in sites.iter().enumerate() {
            self.ledger.push_step(vec![eqs[k]], vec![Coefficient::Omega { site: s, spin: Spin::Up }]);
        }
        let downs: Vec<_> = sites
            .iter()
            .map(|&(s, a)| {
                self.template(Target::Omega { site: s, spin: Spin::Down }, v.omega_down, anc(a, v.omega_down))
            })
            .collect::<Result<_>>()?;
        let eqs = self.round(format!("{tag}b omega down"), color, downs, spectators, reshaped);
        for (k, &(s, _)) in sites.iter().enumerate() {
            self.ledger.push_step(vec![eqs[k]], vec![Coefficient::Omega { site: s, spin: Spin::Down }]);
        }
        let xis: Vec<_> = sites
            .iter()
            .map(|&(s, _)| self.template(Target::Xi { site: s }, Variant::AncillaFree, None))
            .collect::<Result<_>>()?;
        let eqs = self.round(format!("{tag}c xi"), color, xis, spectators, reshaped);
        for (k, &(s, _)) in sites.iter().enumerate() {
            self.ledger.push_step(vec![eqs[k]], vec![Coefficient::Xi { site: s }]);
        }
        Ok(())
    }

    fn hopping_stages(&mut self, color: usize, edges: &[(usize, usize)], spectators: &Distribution) -> Result<()> {
        for (stage, part) in [("d", HopPart::Re), ("e", HopPart::Im)] {
            let coef = |i, j, spin| match part {
                HopPart::Re => Coefficient::ReHop { i, j, spin },
                HopPart::Im => Coefficient::ImHop { i, j, spin },
            };
            match self.cfg.variants.hopping {
                Variant::Ancilla => {
                    for spin in Spin::BOTH {
                        let ts: Vec<_> = edges
                            .iter()
                            .enumerate()
                            .map(|(k, &(i, j))| self.template(Target::Hopping { i, j, spin, part }, Variant::Ancilla, Some(2 * k)))
                            .collect::<Result<_>>()?;
                        let label = format!("color {color} {stage} {part:?} {}", spin.arrow());
                        let eqs = self.round(label, Some(color), ts, spectators, true);
                        for (k, &(i, j)) in edges.iter().enumerate() {
                            self.ledger.push_step(vec![eqs[k]], vec![coef(i, j, spin)]);
                        }
                    }
                }
                Variant::AncillaFree => {
                    let mut eq_pairs = vec![Vec::new(); edges.len()];
                    for sum in [true, false] {
                        let ts: Vec<_> = edges
                            .iter()
                            .map(|&(i, j)| {
                                let t = if sum { Target::HopSum { i, j, part } } else { Target::HopDiff { i, j, part } };
                                self.template(t, Variant::AncillaFree, None)
                            })
                            .collect::<Result<_>>()?;
                        let label = format!("color {color} {stage} {part:?} {}", if sum { "sum" } else { "diff" });
                        let eqs = self.round(label, Some(color), ts, spectators, true);
                        for (k, e) in eqs.into_iter().enumerate() {
                            eq_pairs[k].push(e);
                        }
                    }
                    for (k, &(i, j)) in edges.iter().enumerate() {
                        self.ledger
                            .push_step(eq_pairs[k].clone(), vec![coef(i, j, Spin::Up), coef(i, j, Spin::Down)]);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lay out every round of the protocol for a graph. Needs only the graph and
/// the coefficient bound, never the coefficients themselves.
pub fn plan_learning(graph: &InteractionGraph, lambda: f64, cfg: &LearnerConfig) -> Result<LearnPlan> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Validation(format!("lambda_max must be positive, got {lambda}")));
    }
    let coloring = color_links(graph);
    let classes = coloring.classes();
    let max_clusters = classes.iter().map(Vec::len).max().unwrap_or(0);
    let isolated = graph.isolated_sites();
    let mut n_anc = 2 * max_clusters;
    if !isolated.is_empty() {
        n_anc = n_anc.max(1);
    }
    let layout = ModeLayout::for_sites(graph.n_sites(), n_anc)?;
    let mut b = Builder { layout, ledger: ComboLedger::default(), rounds: Vec::new(), cfg };

    let mut learned: BTreeSet<usize> = BTreeSet::new();
    for (c, edges) in classes.iter().enumerate() {
        let active: BTreeSet<usize> = edges.iter().flat_map(|&(i, j)| [i, j]).collect();
        let spectator_sites: Vec<usize> = (0..graph.n_sites()).filter(|s| !active.contains(s)).collect();
        let spectators = Distribution::manybody_phase(&spectator_sites);
        let mut new_sites = Vec::new();
        for (k, &(i, j)) in edges.iter().enumerate() {
            for (s, a) in [(i, 2 * k), (j, 2 * k + 1)] {
                if learned.insert(s) {
                    new_sites.push((s, a));
                }
            }
        }
        b.site_stages(&format!("color {c} "), Some(c), &new_sites, &spectators, true)?;
        b.hopping_stages(c, edges, &spectators)?;
    }
    // Isolated sites carry no hopping, so they need no reshaping; they are
    // batched so that each batch fits the ancilla register.
    for (n, chunk) in isolated.chunks(n_anc.max(1)).enumerate() {
        let sites: Vec<(usize, usize)> = chunk.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        b.site_stages(&format!("isolated {n} "), None, &sites, &Distribution::trivial(), false)?;
    }

    let all: Vec<Coefficient> = {
        let m = HubbardModel::zero(graph.clone(), lambda);
        m.coefficients()
    };
    b.ledger.check_complete(&all)?;
    let eps = b.ledger.allocate(cfg.epsilon)?;
    let mut rounds = Vec::new();
    for (label, color, templates, eqs, dist, reshaped) in b.rounds {
        let target = eqs.iter().map(|&e| eps[e]).fold(f64::INFINITY, f64::min);
        let bound = templates.iter().map(|t| t.phase.bound(lambda)).fold(0.0, f64::max);
        let ts = templates[0].time_scale;
        if templates.iter().any(|t| t.time_scale != ts) {
            return Err(Error::Validation(format!("round {label} mixes time scales")));
        }
        let schedule = make_scaled_schedule(target, bound, cfg.shot_rule, ts, cfg.max_generations)?;
        rounds.push(PlannedRound {
            label,
            color,
            round: ParallelRound::new(templates, dist)?,
            equations: eqs,
            schedule,
            reshaped,
        });
    }
    Ok(LearnPlan { graph: graph.clone(), layout, coloring, ledger: b.ledger, rounds, config: cfg.clone(), lambda })
}

/// Exact outcome distributions for every round and generation of a plan on
/// one model. Depends on the model only, so it is shared across seeds.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub plan: LearnPlan,
    pub truth: Vec<(Coefficient, f64)>,
    /// Rounds that fit the budget, each with one outcome table per generation.
    pub outcomes: Vec<Vec<JointOutcomes>>,
    pub budget_exhausted: bool,
}

pub fn prepare(plan: LearnPlan, model: &HubbardModel) -> Result<PreparedRun> {
    model.validate()?;
    if model.lambda_max > plan.lambda * (1.0 + 1e-12) {
        return Err(Error::Validation("model bound exceeds the planned lambda".into()));
    }
    if model.graph != plan.graph {
        return Err(Error::Validation("model graph differs from the planned graph".into()));
    }
    let h_sys = build_hamiltonian(model, plan.layout.system_only())?;
    let mut outcomes = Vec::new();
    let mut spent = 0.0;
    let mut budget_exhausted = false;
    for pr in &plan.rounds {
        let cost = pr.schedule.total_time();
        if let Some(b) = plan.config.budget {
            if spent + cost > b {
                budget_exhausted = true;
                break;
            }
        }
        spent += cost;
        let evolver = AveragedEvolver::new(&h_sys, &pr.round.distribution)?;
        let per_gen = pr
            .schedule
            .generations
            .iter()
            .map(|g| joint_outcomes(&evolver, &pr.round, plan.layout, g.t, pr.steps(g.t, plan.config.c_r)))
            .collect::<Result<Vec<_>>>()?;
        for j in &per_gen {
            if !j.parity.is_definite() {
                return Err(Error::Validation(format!("round {} produced a mixed-parity state", pr.label)));
            }
        }
        outcomes.push(per_gen);
    }
    let truth = model.coefficients().into_iter().map(|c| (c, model.value(c).unwrap_or(f64::NAN))).collect();
    Ok(PreparedRun { plan, truth, outcomes, budget_exhausted })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub coefficient: Coefficient,
    pub estimate: f64,
    /// Propagated half-width.
    pub half_width: f64,
    pub target_epsilon: f64,
    pub truth: Option<f64>,
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPhase {
    pub name: String,
    pub round: String,
    pub value: f64,
    pub half_width: f64,
    pub target_epsilon: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Resources {
    /// Total evolution time over all shots.
    pub t_tot: f64,
    /// Number of shots (joint shots count once).
    pub n_experiments: u64,
    pub n_ancillae: usize,
    pub n_flo_unitaries: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub seed: u64,
    pub epsilon: f64,
    pub n_sites: usize,
    pub n_colors: usize,
    pub estimates: Vec<CoefficientEstimate>,
    pub raw_phases: Vec<RawPhase>,
    pub resources: Resources,
    pub budget_exhausted: bool,
}

impl LearnReport {
    pub fn max_abs_error(&self) -> Option<f64> {
        self.estimates.iter().map(|e| e.error.map(f64::abs)).collect::<Option<Vec<_>>>().and_then(|v| {
            v.into_iter().fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
        })
    }

    pub fn rms_error(&self) -> Option<f64> {
        let errs: Option<Vec<f64>> = self.estimates.iter().map(|e| e.error).collect();
        let errs = errs?;
        if errs.is_empty() {
            return None;
        }
        Some((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
    }

    pub fn get(&self, c: Coefficient) -> Option<&CoefficientEstimate> {
        self.estimates.iter().find(|e| e.coefficient == c)
    }
}

impl PreparedRun {
    /// Sample every shot with the given seed and SPAM bias, estimate every
    /// phase and solve the ledger.
    pub fn execute(&self, seed: u64, spam: &SpamModel) -> Result<LearnReport> {
        spam.validate()?;
        let plan = &self.plan;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut measured = BTreeMap::new();
        let mut raw_phases = Vec::new();
        let mut res = Resources { n_ancillae: plan.layout.n_ancilla_modes(), ..Resources::default() };
        let eps = plan.ledger.allocate(plan.config.epsilon)?;
        for (pr, tables) in plan.rounds.iter().zip(&self.outcomes) {
            let n_exp = pr.round.experiments.len();
            let mut counts = vec![Vec::with_capacity(tables.len()); n_exp];
            for (g, table) in pr.schedule.generations.iter().zip(tables) {
                let m = g.shots as u64;
                let s0 = table.sample(ExperimentType::Type0, m, spam, &mut rng);
                let sp = table.sample(ExperimentType::TypePlus, m, spam, &mut rng);
                for k in 0..n_exp {
                    counts[k].push(GenerationCount {
                        n0_success: s0[k] as usize,
                        n0_total: g.shots,
                        nplus_success: sp[k] as usize,
                        nplus_total: g.shots,
                    });
                }
                let flo = pr.round.flo_per_shot(pr.steps(g.t, plan.config.c_r)) as u64;
                for _ in 0..2 * m {
                    res.t_tot += g.t;
                    res.n_experiments += 1;
                    res.n_flo_unitaries += flo;
                }
            }
            for (k, &eq) in pr.equations.iter().enumerate() {
                let est = estimate_phase(&pr.schedule, &counts[k])?;
                raw_phases.push(RawPhase {
                    name: plan.ledger.equations[eq].name.clone(),
                    round: pr.label.clone(),
                    value: est.value,
                    half_width: est.half_width,
                    target_epsilon: eps[eq],
                });
                measured.insert(eq, est);
            }
        }
        let combined = combine_estimates(&plan.ledger, &measured)?;
        let truth: BTreeMap<Coefficient, f64> = self.truth.iter().copied().collect();
        let estimates = self
            .truth
            .iter()
            .filter_map(|&(c, _)| {
                combined.get(&c).map(|e| {
                    let t = truth.get(&c).copied();
                    CoefficientEstimate {
                        name: c.name(),
                        coefficient: c,
                        estimate: e.value,
                        half_width: e.half_width,
                        target_epsilon: plan.config.epsilon,
                        truth: t,
                        error: t.map(|t| e.value - t),
                    }
                })
            })
            .collect();
        Ok(LearnReport {
            seed,
            epsilon: plan.config.epsilon,
            n_sites: plan.layout.n_system_modes() / 2,
            n_colors: plan.coloring.n_colors,
            estimates,
            raw_phases,
            resources: res,
            budget_exhausted: self.budget_exhausted,
        })
    }
}

/// Plan, prepare and execute in one call.
pub fn learn_many_body(model: &HubbardModel, cfg: &LearnerConfig, spam: &SpamModel, seed: u64) -> Result<LearnReport> {
    let plan = plan_learning(&model.graph, model.lambda_max, cfg)?;
    prepare(plan, model)?.execute(seed, spam)
}

/// The single-site protocol: one ancilla, no reshaping.
pub fn learn_single_site(model: &HubbardModel, cfg: &LearnerConfig, spam: &SpamModel, seed: u64) -> Result<LearnReport> {
    if model.n_sites() != 1 {
        return Err(Error::Validation(format!("single-site learner got {} sites", model.n_sites())));
    }
    learn_many_body(model, cfg, spam, seed)
}

/// The two-site protocol with stages (a)-(e) on one cluster.
pub fn learn_two_site(
    model: &TwoSiteModel,
    lambda: f64,
    cfg: &LearnerConfig,
    spam: &SpamModel,
    seed: u64,
) -> Result<LearnReport> {
    learn_many_body(&model.to_hubbard(lambda), cfg, spam, seed)
}
