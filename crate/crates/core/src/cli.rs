//! Command-line front end: `learn`, `sweep`, `validate` and `gen-model`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 budget exhausted,
//! 3 validation failure.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{SpamModel, Variant};
use crate::learner::{
    color_links, plan_learning, prepare, LearnReport, LearnerConfig, LinkColoring, StageVariants, DEFAULT_C_R,
};
use crate::model::{random_model, HubbardModel, InteractionGraph};
use crate::rpe::{log_log_slope, ShotRule, DEFAULT_M_STAR};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hubbard-learn", version, about = "Learn fermionic Hubbard Hamiltonians from simulated experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the first learning run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target accuracy per coefficient.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Seeded learning runs per accuracy.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn every coefficient of one model.
    Learn(CommonArgs),
    /// Repeat learning over several accuracies and fit the time scaling.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated accuracies (at least three).
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Run the fast invariant battery.
    Validate,
    /// Write a random model file.
    GenModel {
        #[arg(long, default_value_t = 2)]
        n_sites: usize,
        /// chain, ring or random-degree-D
        #[arg(long, default_value = "chain")]
        topology: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        lambda_max: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Chain,
    Ring,
    RandomDegree(usize),
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Topology::Chain),
            "ring" => Ok(Topology::Ring),
            _ => s
                .strip_prefix("random-degree-")
                .and_then(|d| d.parse().ok())
                .filter(|&d: &usize| d > 0)
                .map(Topology::RandomDegree)
                .ok_or_else(|| Error::Config(format!("unknown topology {s:?} (chain, ring, random-degree-D)"))),
        }
    }
}

impl Topology {
    pub fn graph(self, n_sites: usize, seed: u64) -> Result<InteractionGraph> {
        if n_sites == 0 {
            return Err(Error::Config("n_sites must be positive".into()));
        }
        Ok(match self {
            Topology::Chain => InteractionGraph::chain(n_sites),
            Topology::Ring if n_sites < 3 => InteractionGraph::chain(n_sites),
            Topology::Ring => InteractionGraph::ring(n_sites),
            Topology::RandomDegree(d) => InteractionGraph::random_bounded_degree(n_sites, d, seed),
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    /// JSON model file; when present the random fields are ignored.
    pub file: Option<PathBuf>,
    #[serde(default = "default_sites")]
    pub n_sites: usize,
    #[serde(default = "default_topology")]
    pub topology: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda_max: f64,
}

fn default_sites() -> usize {
    2
}
fn default_topology() -> String {
    "chain".into()
}
fn default_lambda() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.02
}
fn default_trials() -> usize {
    10
}
fn default_c_r() -> f64 {
    DEFAULT_C_R
}
fn default_m_star() -> usize {
    DEFAULT_M_STAR
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ModelSource {
    fn default() -> Self {
        Self { file: None, n_sites: 2, topology: default_topology(), seed: 0, lambda_max: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    #[serde(default = "ancilla_free")]
    pub omega_down: Variant,
    #[serde(default = "ancilla")]
    pub hopping: Variant,
}

fn ancilla() -> Variant {
    Variant::Ancilla
}
fn ancilla_free() -> Variant {
    Variant::AncillaFree
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self { omega_down: Variant::AncillaFree, hopping: Variant::Ancilla }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RpeConfig {
    #[serde(default = "default_m_star")]
    pub m_star: usize,
    /// When set, shots follow the Hoeffding rule instead of `m_star`.
    pub failure_prob: Option<f64>,
}

impl Default for RpeConfig {
    fn default() -> Self {
        Self { m_star: DEFAULT_M_STAR, failure_prob: None }
    }
}

/// Everything a run needs; read from TOML, then overridden by flags.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub variants: VariantConfig,
    #[serde(default)]
    pub spam: SpamModel,
    #[serde(default = "default_c_r")]
    pub c_r: f64,
    #[serde(default)]
    pub rpe: RpeConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cap on total evolution time per learning run.
    pub budget: Option<f64>,
    /// Accuracies for `sweep`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn apply(&mut self, args: &CommonArgs) {
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(o) = &args.out {
            self.out = o.clone();
        }
        if let Some(e) = args.epsilon {
            self.epsilon = e;
        }
        if let Some(t) = args.trials {
            self.trials = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.c_r > 0.0 && self.c_r.is_finite()) {
            return bad(format!("c_r must be positive, got {}", self.c_r));
        }
        if self.rpe.m_star == 0 {
            return bad("rpe.m_star must be positive".into());
        }
        if let Some(f) = self.rpe.failure_prob {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("rpe.failure_prob must lie in (0, 1), got {f}"));
            }
        }
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if let Some(b) = self.budget {
            if !(b >= 0.0) {
                return bad(format!("budget must be nonnegative, got {b}"));
            }
        }
        if !(self.model.lambda_max > 0.0 && self.model.lambda_max.is_finite()) {
            return bad(format!("lambda_max must be positive, got {}", self.model.lambda_max));
        }
        if let Some(f) = &self.model.file {
            if !f.is_file() {
                return bad(format!("model file {} does not exist", f.display()));
            }
        }
        self.spam.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.topology.parse::<Topology>()?;
        Ok(())
    }

    pub fn learner_config(&self, epsilon: f64) -> LearnerConfig {
        LearnerConfig {
            epsilon,
            variants: StageVariants {
                omega_up: Variant::Ancilla,
                omega_down: self.variants.omega_down,
                hopping: self.variants.hopping,
            },
            c_r: self.c_r,
            shot_rule: match self.rpe.failure_prob {
                Some(f) => ShotRule::FailureProbability { failure_prob: f, eta: ShotRule::DEFAULT_ETA },
                None => ShotRule::Constant(self.rpe.m_star),
            },
            budget: self.budget,
            ..LearnerConfig::new(epsilon)
        }
    }

    pub fn build_model(&self) -> Result<HubbardModel> {
        match &self.model.file {
            Some(f) => HubbardModel::load(f),
            None => {
                let topo: Topology = self.model.topology.parse()?;
                let g = topo.graph(self.model.n_sites, self.model.seed)?;
                Ok(random_model(&g, self.model.seed, self.model.lambda_max))
            }
        }
    }
}

/// Per-coefficient CSV: `name, truth, estimate, error, half_width`.
pub fn write_estimates_csv(report: &LearnReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "truth", "estimate", "error", "half_width"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
    for e in &report.estimates {
        w.write_record([
            e.name.clone(),
            opt(e.truth),
            format!("{:.12e}", e.estimate),
            opt(e.error),
            format!("{:.12e}", e.half_width),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub seed: u64,
    pub t_tot: f64,
    pub n_experiments: u64,
    pub n_flo: u64,
    pub rms_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub mean_t_tot: f64,
    pub mean_n_experiments: f64,
    pub rms_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    /// Slope of `log t_tot` against `log(1/ε)`.
    pub time_slope: f64,
    /// Slope of `log rms_error` against `log t_tot`.
    pub error_slope: Option<f64>,
    /// `n_experiments` ratios between consecutive halvings of ε.
    pub experiment_ratios: Vec<f64>,
}

/// Run `trials` seeded learning runs per accuracy on the configured model.
pub fn run_sweep(cfg: &RunConfig, epsilons: &[f64]) -> Result<(Vec<SweepRow>, SweepSummary)> {
    if epsilons.len() < 3 {
        return Err(Error::Config(format!("a sweep needs at least three accuracies, got {}", epsilons.len())));
    }
    if epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Config("sweep accuracies must lie in (0, 1)".into()));
    }
    let model = cfg.build_model()?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &eps in epsilons {
        let plan = plan_learning(&model.graph, model.lambda_max, &cfg.learner_config(eps))?;
        let prepared = prepare(plan, &model)?;
        let seeds: Vec<u64> = (0..cfg.trials as u64).map(|k| cfg.seed + k).collect();
        let reports: Vec<LearnReport> = seeds
            .par_iter()
            .map(|&s| prepared.execute(s, &cfg.spam))
            .collect::<Result<_>>()?;
        let mut sq = 0.0;
        let mut n = 0usize;
        for r in &reports {
            for e in &r.estimates {
                if let Some(x) = e.error {
                    sq += x * x;
                    n += 1;
                }
            }
            rows.push(SweepRow {
                epsilon: eps,
                seed: r.seed,
                t_tot: r.resources.t_tot,
                n_experiments: r.resources.n_experiments,
                n_flo: r.resources.n_flo_unitaries,
                rms_error: r.rms_error().unwrap_or(f64::NAN),
            });
        }
        let k = reports.len() as f64;
        points.push(SweepPoint {
            epsilon: eps,
            mean_t_tot: reports.iter().map(|r| r.resources.t_tot).sum::<f64>() / k,
            mean_n_experiments: reports.iter().map(|r| r.resources.n_experiments as f64).sum::<f64>() / k,
            rms_error: (sq / n.max(1) as f64).sqrt(),
        });
    }
    let time_slope = log_log_slope(&points.iter().map(|p| (1.0 / p.epsilon, p.mean_t_tot)).collect::<Vec<_>>())
        .ok_or_else(|| Error::Config("sweep accuracies must differ".into()))?;
    let error_slope = log_log_slope(
        &points.iter().filter(|p| p.rms_error > 0.0).map(|p| (p.mean_t_tot, p.rms_error)).collect::<Vec<_>>(),
    );
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let experiment_ratios = sorted
        .windows(2)
        .map(|w| {
            let halvings = (w[0].epsilon / w[1].epsilon).log2();
            (w[1].mean_n_experiments / w[0].mean_n_experiments).powf(1.0 / halvings.max(1e-12))
        })
        .collect();
    Ok((rows, SweepSummary { points, time_slope, error_slope, experiment_ratios }))
}

/// One named check of the validation battery.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, deviation: Result<f64>, tol: f64) -> Check {
    match deviation {
        Ok(d) => Check { name: name.into(), passed: d <= tol, detail: format!("deviation {d:.2e} (tolerance {tol:.0e})") },
        Err(e) => Check { name: name.into(), passed: false, detail: e.to_string() },
    }
}

fn car_deviation(n_modes: usize) -> Result<f64> {
    use crate::fock::{annihilation_op, creation_op, ModeLayout, OperatorMatrix};
    let l = ModeLayout::new(n_modes, 0)?;
    let a: Vec<OperatorMatrix> = (0..n_modes).map(|k| annihilation_op(l, k)).collect::<Result<_>>()?;
    let c: Vec<OperatorMatrix> = (0..n_modes).map(|k| creation_op(l, k)).collect::<Result<_>>()?;
    let id = OperatorMatrix::identity(l);
    let zero = OperatorMatrix::zeros(l);
    let mut worst = 0.0f64;
    for j in 0..n_modes {
        for k in 0..n_modes {
            let expect = if j == k { &id } else { &zero };
            worst = worst.max(a[j].anticommutator(&c[k]).max_abs_diff(expect));
            worst = worst.max(a[j].anticommutator(&a[k]).max_abs());
        }
    }
    Ok(worst)
}

fn table_deviation(basis: crate::model::RotationBasis) -> Result<f64> {
    use crate::flo::sequence_matrix;
    use crate::fock::ModeLayout;
    use crate::model::{build_hamiltonian, two_site_conjugated_hamiltonian, TwoSiteModel};
    let l = ModeLayout::new(4, 0)?;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let tm = TwoSiteModel::random(seed, 1.0);
        let h = build_hamiltonian(&tm.to_hubbard(1.0), l)?;
        let rot = |i, j| match basis {
            crate::model::RotationBasis::Uy => crate::flo::FloGate::uy(i, j, crate::flo::ROTATION_ANGLE),
            crate::model::RotationBasis::Ux => crate::flo::FloGate::ux(i, j, crate::flo::ROTATION_ANGLE),
        };
        let r = sequence_matrix(&[rot(0, 2), rot(1, 3)], l)?;
        let conj = r.dagger().matmul(&h).matmul(&r);
        let table = two_site_conjugated_hamiltonian(&tm, basis).assemble_in_plain_modes(l, [0, 1, 2, 3])?;
        worst = worst.max(conj.max_abs_diff(&table));
    }
    Ok(worst)
}

fn quadrature_deviation() -> Result<f64> {
    use crate::dynamics::{effective_hamiltonian, Distribution};
    use crate::fock::ModeLayout;
    use crate::model::{build_hamiltonian, TwoSiteModel};
    use crate::oracle::channel_average_oracle;
    let l = ModeLayout::new(4, 0)?;
    let h = build_hamiltonian(&TwoSiteModel::random(3, 1.0).to_hubbard(1.0), l)?;
    let mut worst = 0.0f64;
    for d in [
        Distribution::site_pair_phase(&[0, 1]),
        Distribution::ux_half_angle(&[(0, 2), (1, 3)]),
        Distribution::uy_half_angle(&[(0, 2), (1, 3)]),
    ] {
        let q = channel_average_oracle(&h, &d, 4096)?;
        worst = worst.max(q.max_abs_diff(&effective_hamiltonian(&h, &d)?));
    }
    let g = InteractionGraph::chain(3);
    let lm = ModeLayout::for_sites(3, 0)?;
    let hm = build_hamiltonian(&random_model(&g, 4, 1.0), lm)?;
    let d = Distribution::manybody_phase(&[2]);
    let q = channel_average_oracle(&hm, &d, 4096)?;
    Ok(worst.max(q.max_abs_diff(&effective_hamiltonian(&hm, &d)?)))
}

fn coloring_audit() -> Result<f64> {
    let mut failures = 0usize;
    for seed in 0..50 {
        let g = InteractionGraph::random_bounded_degree(20, 3, seed);
        let c = color_links(&g);
        if !c.violations().is_empty() || c.n_colors > LinkColoring::bound(g.max_degree()) {
            failures += 1;
        }
    }
    Ok(failures as f64)
}

/// The fast invariant battery behind `validate`.
pub fn validation_checks() -> Vec<Check> {
    use crate::model::RotationBasis;
    vec![
        check("anticommutation relations, 6 modes", car_deviation(6), 1e-12),
        check("rotated-mode table, Uy basis (real hopping parts)", table_deviation(RotationBasis::Uy), 1e-12),
        check("rotated-mode table, Ux basis (imaginary hopping parts)", table_deviation(RotationBasis::Ux), 1e-12),
        check(
            "half-angle Ux equals rotated number phase",
            [0.3, 1.1, 2.9].iter().map(|&t| crate::flo::ux_uy_number_identity_check(t)).try_fold(0.0f64, |a, d| d.map(|d| a.max(d))),
            1e-12,
        ),
        check("reshaping averages match 4096-point quadrature", quadrature_deviation(), 1e-10),
        check("distance-2 link coloring audit, 50 graphs", coloring_audit(), 0.0),
    ]
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_learn(args: &CommonArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let model = cfg.build_model()?;
    let plan = plan_learning(&model.graph, model.lambda_max, &cfg.learner_config(cfg.epsilon))?;
    let report = prepare(plan, &model)?.execute(cfg.seed, &cfg.spam)?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&report, &cfg.out.join("report.json"))?;
    write_estimates_csv(&report, &cfg.out.join("estimates.csv"))?;
    println!(
        "learned {} coefficients, t_tot = {:.6e}, max |error| = {}",
        report.estimates.len(),
        report.resources.t_tot,
        report.max_abs_error().map_or("n/a".into(), |e| format!("{e:.3e}"))
    );
    if report.budget_exhausted {
        eprintln!("budget exhausted: partial report written");
        return Ok(EXIT_BUDGET);
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(args: &CommonArgs, epsilons: Option<&[f64]>) -> Result<i32> {
    let cfg = load_config(args)?;
    let eps = epsilons.map(<[f64]>::to_vec).unwrap_or_else(|| cfg.epsilons.clone());
    let (rows, summary) = run_sweep(&cfg, &eps)?;
    fs::create_dir_all(&cfg.out)?;
    let mut w = csv::Writer::from_path(cfg.out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&summary, &cfg.out.join("sweep_summary.json"))?;
    println!("time slope {:.3}", summary.time_slope);
    Ok(EXIT_OK)
}

fn cmd_validate() -> i32 {
    let checks = validation_checks();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

fn cmd_gen_model(n_sites: usize, topology: &str, seed: u64, lambda_max: f64, out: &Path) -> Result<i32> {
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::Config(format!("lambda_max must be positive, got {lambda_max}")));
    }
    let g = topology.parse::<Topology>()?.graph(n_sites, seed)?;
    random_model(&g, seed, lambda_max).save(out)?;
    Ok(EXIT_OK)
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(args);
    cfg.validate()?;
    Ok(cfg)
}

fn with_pool<F: FnOnce() -> Result<i32> + Send>(jobs: Option<usize>, f: F) -> Result<i32> {
    match jobs {
        Some(0) => Err(Error::Config("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(f),
        None => f(),
    }
}

/// Parse arguments, run the command, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Learn(a) => with_pool(a.jobs, || cmd_learn(a)),
        Command::Sweep { common, epsilons } => with_pool(common.jobs, || cmd_sweep(common, epsilons.as_deref())),
        Command::Validate => Ok(cmd_validate()),
        Command::GenModel { n_sites, topology, seed, lambda_max, out } => {
            cmd_gen_model(*n_sites, topology, *seed, *lambda_max, out)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
