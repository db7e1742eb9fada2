//! Experiment configuration and dispatch. A config file is TOML:
//!
//! ```toml
//! command = "exact"          # sample | exact | eta | mix | factorize | couple | accept
//! seed = 7
//!
//! [system]
//! graph = "grid:3x3"         # path:N cycle:N complete:N grid:AxB[xC] gnp:N:P:SEED or a file
//! model = "ising:0.4"        # ising:BETA potts:Q:BETA hardcore:LAMBDA
//! boundary = "0:1"
//!
//! [dynamics]
//! kernel = "glauber"         # glauber scan oneway-scan evenodd evenodd-literal block independent-sets sw
//!
//! [analysis]
//! scheme = "kpf"             # at ubf kpf gbf edge-spin
//!
//! [caps]
//! states = 1048576
//! ```
//!
//! Every field except `command` has a default, and the resolved config is
//! echoed into the report.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acceptance::{acceptance_suite, AcceptanceOptions};
use crate::couplings::{
    component_tail, coupling_time, default_distant_radius, disagreement_radius,
    rectangle_block_contraction, MonotoneCoupler, DEFAULT_BUDGET,
};
use crate::dynamics::{replica_rng, run_replicas, BlockSpec, ChainState, Kernel, ScanOrder};
use crate::error::{Error, Result};
use crate::exact::{
    eigenvalues, induced_matrix_on, mlsi_estimate, relative_gap, reversibility_residual,
    spectral_gap, stationarity_residual, tv_mixing_time, Factorizer, Scheme,
};
use crate::graphs::{
    complete_graph, cycle_graph, greedy_independent_partition, path_graph, random_gnp, Graph,
    GridShape,
};
use crate::report::{write_csv, Check, RunReport};
use crate::spectral::{
    conductance_of, dobrushin_matrix, es_constant, eta_of, gbf_constant, influence_matrix_of,
    local_random_walk_of, reference_bounds, ubf_constant,
};
use crate::spin::{
    make_model, marginal_lower_bound_of, GibbsTable, ModelKind, Pinning, Spin, SpinOrder,
    SpinSystem, DEFAULT_STATE_CAP,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Sample,
    Exact,
    Eta,
    Mix,
    Factorize,
    Couple,
    Accept,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Exact => "exact",
            Command::Eta => "eta",
            Command::Mix => "mix",
            Command::Factorize => "factorize",
            Command::Couple => "couple",
            Command::Accept => "accept",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub graph: String,
    pub model: String,
    /// Boundary pinning as `v:s` pairs.
    pub boundary: Option<String>,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            graph: "path:2".into(),
            model: "ising:0.5".into(),
            boundary: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSpec {
    pub kernel: String,
    /// Scan order file (one vertex per line); identity when absent.
    pub order: Option<PathBuf>,
    /// Block file (`weight: v v ...` per line) for the block kernel.
    pub blocks: Option<PathBuf>,
    /// Chain steps per replica for `sample`.
    pub steps: u64,
    pub replicas: usize,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            kernel: "glauber".into(),
            order: None,
            blocks: None,
            steps: 100,
            replicas: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Total-variation target for the mixing time.
    pub eps: f64,
    pub max_steps: u64,
    /// Random test functions for MLSI and factorization chases.
    pub trials: usize,
    pub climb_steps: usize,
    pub scheme: String,
    /// Block size for `ubf`; `⌈n/2⌉` when absent.
    pub ell: Option<usize>,
    /// Overrides the reference constant of `factorize`.
    pub constant: Option<f64>,
    /// Restricts `eta` to pinnings on at most this many vertices.
    pub max_pinned: Option<usize>,
    /// Pinning for the influence matrix and local walk in `eta`.
    pub tau: Option<String>,
    /// `couple` experiment: time | radius | tail | ssm.
    pub experiment: String,
    pub theta: f64,
    pub vertex: Option<usize>,
    pub block_radius: usize,
    pub radius: Option<usize>,
    pub quantile: f64,
    pub budget: u64,
    /// Steps per trial for the radius experiment.
    pub horizon: usize,
    pub burn_in: usize,
    pub mc_trials: u64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            eps: 0.25,
            max_steps: 1_000_000,
            trials: 500,
            climb_steps: 300,
            scheme: "kpf".into(),
            ell: None,
            constant: None,
            max_pinned: None,
            tau: None,
            experiment: "time".into(),
            theta: 1.0,
            vertex: None,
            block_radius: 2,
            radius: None,
            quantile: 0.75,
            budget: DEFAULT_BUDGET,
            horizon: 5,
            burn_in: 50,
            mc_trials: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    /// Largest state space for exact enumeration.
    pub states: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            states: DEFAULT_STATE_CAP as u64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub csv: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            seed: default_seed(),
            threads: 0,
            system: SystemSpec::default(),
            dynamics: DynamicsSpec::default(),
            analysis: AnalysisSpec::default(),
            caps: Caps::default(),
            output: OutputSpec::default(),
        }
    }

    /// Parses TOML; errors carry the line of the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.caps.states == 0 {
            return Err(Error::InvalidParameter("caps.states must be positive".into()));
        }
        if !(self.analysis.theta > 0.0 && self.analysis.theta <= 1.0) {
            return Err(Error::InvalidParameter("analysis.theta must lie in (0, 1]".into()));
        }
        if !(self.analysis.quantile > 0.0 && self.analysis.quantile <= 1.0) {
            return Err(Error::InvalidParameter("analysis.quantile must lie in (0, 1]".into()));
        }
        if !(self.analysis.eps > 0.0 && self.analysis.eps < 1.0) {
            return Err(Error::InvalidParameter("analysis.eps must lie in (0, 1)".into()));
        }
        parse_kernel_name(&self.dynamics.kernel)?;
        parse_scheme_name(&self.analysis.scheme)?;
        parse_experiment(&self.analysis.experiment)?;
        Ok(())
    }

    fn cap(&self) -> u128 {
        self.caps.states as u128
    }
}

/// Graph from a generator spec or, failing that, a file path.
pub fn parse_graph_spec(spec: &str) -> Result<Graph> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad number `{s}` in graph spec `{spec}`")))
    };
    match parts[..] {
        ["path", n] => Ok(path_graph(num(n)?)),
        ["cycle", n] => cycle_graph(num(n)?),
        ["complete", n] => Ok(complete_graph(num(n)?)),
        ["grid", dims] => {
            let dims = dims.split('x').map(num).collect::<Result<Vec<_>>>()?;
            Ok(GridShape::new(&dims)?.graph())
        }
        ["gnp", n, p, seed] => {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad probability `{p}`")))?;
            random_gnp(num(n)?, p, num(seed)? as u64)
        }
        _ if Path::new(spec).exists() => Graph::from_file(spec),
        _ => Err(Error::InvalidParameter(format!(
            "unknown graph `{spec}`; expected path:N, cycle:N, complete:N, grid:AxB, gnp:N:P:SEED or a file"
        ))),
    }
}

/// Lattice shape when the spec is a grid.
pub fn grid_shape(spec: &str) -> Option<GridShape> {
    let dims = spec.strip_prefix("grid:")?;
    let dims: Option<Vec<usize>> = dims.split('x').map(|d| d.parse().ok()).collect();
    GridShape::new(&dims?).ok()
}

pub fn parse_model_spec(spec: &str, g: Arc<Graph>) -> Result<SpinSystem> {
    let parts: Vec<&str> = spec.split(':').collect();
    let real = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad number `{s}` in model spec `{spec}`")))
    };
    match parts[..] {
        ["ising", beta] => make_model(ModelKind::Ising, g, real(beta)?, 2),
        ["potts", q, beta] => {
            let q = q
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad q `{q}`")))?;
            make_model(ModelKind::Potts, g, real(beta)?, q)
        }
        ["hardcore", lambda] => make_model(ModelKind::Hardcore, g, real(lambda)?, 2),
        _ => Err(Error::InvalidParameter(format!(
            "unknown model `{spec}`; expected ising:BETA, potts:Q:BETA or hardcore:LAMBDA"
        ))),
    }
}

const KERNELS: [&str; 8] = [
    "glauber",
    "scan",
    "oneway-scan",
    "evenodd",
    "evenodd-literal",
    "block",
    "independent-sets",
    "sw",
];

fn parse_kernel_name(name: &str) -> Result<&str> {
    KERNELS
        .iter()
        .find(|k| **k == name)
        .copied()
        .ok_or_else(|| Error::InvalidParameter(format!("unknown kernel `{name}`; expected one of {KERNELS:?}")))
}

fn parse_scheme_name(name: &str) -> Result<&str> {
    ["at", "ubf", "kpf", "gbf", "edge-spin"]
        .into_iter()
        .find(|k| *k == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme `{name}`")))
}

fn parse_experiment(name: &str) -> Result<&str> {
    ["time", "radius", "tail", "ssm"]
        .into_iter()
        .find(|k| *k == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{name}`")))
}

pub fn build_kernel(spec: &DynamicsSpec, sys: &SpinSystem) -> Result<Kernel> {
    let n = sys.n();
    let g = sys.graph();
    let order = || -> Result<ScanOrder> {
        match &spec.order {
            Some(p) => ScanOrder::parse(&std::fs::read_to_string(p)?),
            None => Ok(ScanOrder::identity(n)),
        }
    };
    let k = match parse_kernel_name(&spec.kernel)? {
        "glauber" => Kernel::Glauber,
        "scan" => Kernel::Scan(order()?),
        "oneway-scan" => Kernel::OneWayScan(order()?),
        "evenodd" | "evenodd-literal" => {
            let (even, odd) = g
                .bipartition()
                .ok_or_else(|| Error::NotBipartition("graph is not bipartite".into()))?;
            Kernel::even_odd_with(g, even, odd, spec.kernel == "evenodd-literal")?
        }
        "block" => match &spec.blocks {
            Some(p) => Kernel::Block(BlockSpec::parse(n, &std::fs::read_to_string(p)?)?),
            None => Kernel::Block(BlockSpec::singletons(n)?),
        },
        "independent-sets" => Kernel::independent_sets(g)?,
        _ => Kernel::SwendsenWang,
    };
    k.validate(sys)?;
    Ok(k)
}

pub fn build_system(spec: &SystemSpec) -> Result<SpinSystem> {
    let g = Arc::new(parse_graph_spec(&spec.graph)?);
    let sys = parse_model_spec(&spec.model, g)?;
    match &spec.boundary {
        Some(b) => sys.with_boundary(Pinning::parse(b)?),
        None => Ok(sys),
    }
}

fn table(cfg: &ExperimentConfig, sys: &SpinSystem) -> Result<GibbsTable> {
    GibbsTable::build(sys, cfg.cap())
}

fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// Runs one experiment. Output files are written when `output.dir` is set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let (mut report, csv) = match cfg.command {
        Command::Accept => {
            let mut r = acceptance_suite(&AcceptanceOptions {
                seed: cfg.seed,
                cap_states: cfg.cap(),
            });
            r.config = config_json(cfg);
            (r, None)
        }
        Command::Sample => run_sample(cfg)?,
        Command::Exact => (run_exact(cfg)?, None),
        Command::Eta => (run_eta(cfg)?, None),
        Command::Mix => (run_mix(cfg)?, None),
        Command::Factorize => (run_factorize(cfg)?, None),
        Command::Couple => run_couple(cfg)?,
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(dir) = &cfg.output.dir {
        std::fs::create_dir_all(dir)?;
        report.write_json(dir.join("report.json"))?;
        if cfg.output.csv {
            if let Some((name, header, rows)) = csv {
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                write_csv(dir.join(name), &header, &rows)?;
            }
        }
    }
    Ok(report)
}

type Csv = Option<(String, Vec<String>, Vec<Vec<String>>)>;

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn first_valid(sys: &SpinSystem) -> Result<ChainState> {
    (0..sys.q() as Spin)
        .find_map(|s| ChainState::uniform_fill(sys, s).ok())
        .ok_or(Error::EmptyConditional)
}

fn run_sample(cfg: &ExperimentConfig) -> Result<(RunReport, Csv)> {
    let sys = build_system(&cfg.system)?;
    let kernel = build_kernel(&cfg.dynamics, &sys)?;
    let mut report = RunReport::new("sample", config_json(cfg));
    let reps = cfg.dynamics.replicas.max(1);
    let finals = run_replicas(&sys, &kernel, &first_valid(&sys)?, cfg.dynamics.steps, reps, cfg.seed)?;
    let q = sys.q();
    let mut freq = vec![vec![0.0; q]; sys.n()];
    for s in &finals {
        for (v, &x) in s.config.iter().enumerate() {
            freq[v][x as usize] += 1.0 / reps as f64;
        }
    }
    report.value("site_frequencies", &freq);
    if sys.state_space_size() <= cfg.cap() {
        let exact = table(cfg, &sys)?.site_marginals();
        // Largest deviation in units of the binomial standard deviation.
        let mut worst: f64 = 0.0;
        for (fv, ev) in freq.iter().zip(&exact) {
            for (&f, &p) in fv.iter().zip(ev) {
                let sigma = (p * (1.0 - p) / reps as f64).sqrt();
                let z = if sigma > 0.0 { (f - p).abs() / sigma } else if f == p { 0.0 } else { f64::INFINITY };
                worst = worst.max(z);
            }
        }
        report.value("exact_site_marginals", &exact);
        report.checks.push(Check::new(
            "sample-marginals",
            "empirical site marginals within 4 sigma of the exact Gibbs marginals",
            worst,
            4.0,
            worst <= 4.0,
        ));
    }
    let rows = finals
        .iter()
        .enumerate()
        .map(|(r, s)| {
            vec![
                r.to_string(),
                s.config.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    Ok((report, Some(("samples.csv".into(), strings(&["replica", "config"]), rows))))
}

fn run_exact(cfg: &ExperimentConfig) -> Result<RunReport> {
    let sys = build_system(&cfg.system)?;
    let kernel = build_kernel(&cfg.dynamics, &sys)?;
    let t = table(cfg, &sys)?;
    let p = induced_matrix_on(&kernel, &sys, &t)?;
    let mut report = RunReport::new("exact", config_json(cfg));
    let stat = stationarity_residual(&p);
    let rev = reversibility_residual(&p);
    report.value("states", p.len());
    report.value("stationarity_residual", stat);
    report.value("reversibility_residual", rev);
    report.checks.push(Check::new(
        "stationarity",
        "mu P = mu",
        stat,
        1e-10,
        stat < 1e-10,
    ));
    // One-way scans are not reversible in general; only report them.
    if !matches!(kernel, Kernel::OneWayScan(_)) {
        report.checks.push(Check::new(
            "reversibility",
            "detailed balance mu(x) P(x, y) = mu(y) P(y, x)",
            rev,
            1e-10,
            rev < 1e-10,
        ));
        report.value("spectral_gap", spectral_gap(&p)?);
        report.value("relative_gap", relative_gap(&p)?);
        let ev = eigenvalues(&p)?;
        report.value("eigenvalues", &ev[..ev.len().min(10)]);
    }
    report.value(
        "tv_mixing_time",
        tv_mixing_time(&p, cfg.analysis.eps, cfg.analysis.max_steps).ok(),
    );
    Ok(report)
}

fn run_eta(cfg: &ExperimentConfig) -> Result<RunReport> {
    let sys = build_system(&cfg.system)?;
    let t = table(cfg, &sys)?;
    let mut report = RunReport::new("eta", config_json(cfg));
    let eta = eta_of(&t, cfg.analysis.max_pinned)?;
    let b = marginal_lower_bound_of(&t)?;
    let n = t.free_vertices().len();
    report.value("eta", eta.eta);
    report.value("eta_witness", eta.witness.iter().collect::<Vec<_>>());
    report.value("pinnings", eta.pinnings);
    report.value("b", b.b);
    let a = dobrushin_matrix(&sys)?;
    let norm = a.spectral_norm();
    report.value("dobrushin_spectral_norm", norm);
    report.value("dobrushin_row_sum_norm", a.row_sum_norm());
    let delta = sys.graph().max_degree().max(3);
    if let Ok(r) = reference_bounds(eta.eta, b.b, delta, n.max(1), cfg.analysis.theta) {
        report.value("reference_bounds", r);
    }
    if norm < 1.0 && cfg.analysis.max_pinned.is_none() {
        let bound = 2.0 / (1.0 - norm);
        report.checks.push(Check::new(
            "dobrushin-eta",
            "||A|| < 1 implies eta <= 2/(1-||A||)",
            eta.eta,
            bound,
            eta.eta <= bound + 1e-9,
        ));
    }
    if let Some(text) = &cfg.analysis.tau {
        let tau = Pinning::parse(text)?;
        let psi = influence_matrix_of(&t, &tau)?;
        let l1 = psi.lambda_max_general()?;
        report.value("tau_lambda1", l1);
        if let Ok(walk) = local_random_walk_of(&t, &tau) {
            let m = walk.unpinned;
            let l2 = walk.lambda2();
            let mut rng = replica_rng(cfg.seed, 0);
            let phi = conductance_of(&walk.matrix, &walk.stationary, 1000, &mut rng)?;
            report.value("tau_local_walk_lambda2", l2);
            report.value("tau_conductance", phi);
            if walk.index.len() > m {
                let err = (l1 - (m - 1) as f64 * l2).abs();
                report.checks.push(Check::new(
                    "local-walk-identity",
                    "lambda_1(Psi^tau) = (n-k-1) lambda_2(local walk)",
                    err,
                    1e-8,
                    err < 1e-8,
                ));
            }
        }
    }
    Ok(report)
}

fn run_mix(cfg: &ExperimentConfig) -> Result<RunReport> {
    let sys = build_system(&cfg.system)?;
    let kernel = build_kernel(&cfg.dynamics, &sys)?;
    let t = table(cfg, &sys)?;
    let p = induced_matrix_on(&kernel, &sys, &t)?;
    let mut report = RunReport::new("mix", config_json(cfg));
    let mut rng = replica_rng(cfg.seed, 0);
    let est = mlsi_estimate(&p, cfg.analysis.trials, &mut rng)?;
    report.value("tv_mixing_time", tv_mixing_time(&p, cfg.analysis.eps, cfg.analysis.max_steps).ok());
    report.checks.push(Check::new(
        "mlsi-bracket",
        "MLSI witness within [(1-2 mu_min)/log(1/mu_min-1) gap, 2 gap]",
        est.witness,
        est.bracket.1,
        est.witness_in_bracket,
    ));
    report.value("mlsi", est);
    Ok(report)
}

fn run_factorize(cfg: &ExperimentConfig) -> Result<RunReport> {
    let sys = build_system(&cfg.system)?;
    let t = table(cfg, &sys)?;
    let mut report = RunReport::new("factorize", config_json(cfg));
    let n = t.free_vertices().len();
    let eta = eta_of(&t, None)?.eta;
    let b = marginal_lower_bound_of(&t)?.b;
    let g = sys.graph();
    let partition = greedy_independent_partition(g);
    let ell = cfg.analysis.ell.unwrap_or(n.div_ceil(2));
    let refs = reference_bounds(eta, b, g.max_degree().max(3), n, ell as f64 / n as f64)?;
    let (scheme, reference) = match parse_scheme_name(&cfg.analysis.scheme)? {
        "at" => (Scheme::Tensorization, ubf_constant(eta, b, 1.0 / n as f64)),
        "ubf" => (Scheme::UniformBlock(ell), refs.c_ubf),
        "kpf" => (Scheme::KPartite(partition), refs.kpf),
        "gbf" => {
            let spec = match &cfg.dynamics.blocks {
                Some(p) => BlockSpec::parse(sys.n(), &std::fs::read_to_string(p)?)?,
                None => BlockSpec::from_partition(sys.n(), &partition)?,
            };
            (Scheme::GeneralBlock(spec), gbf_constant(partition.k(), refs.kpf))
        }
        _ => {
            let beta = sys
                .potts_beta()
                .filter(|&b| b > 0.0)
                .ok_or_else(|| Error::Unsupported("edge-spin needs ferromagnetic Potts with beta > 0".into()))?;
            (Scheme::EdgeSpin, es_constant(beta, g.max_degree(), partition.k(), refs.kpf))
        }
    };
    let constant = cfg.analysis.constant.unwrap_or(reference);
    let fz = Factorizer::with_table(scheme.clone(), &sys, &t, constant)?;
    let mut rng = replica_rng(cfg.seed, 0);
    let chase = fz.chase(cfg.analysis.trials, cfg.analysis.climb_steps, &mut rng);
    report.value("eta", eta);
    report.value("b", b);
    report.value("reference_constant", reference);
    report.checks.push(Check::new(
        "factorization",
        "entropy factorization holds with the given constant",
        chase.chased_max,
        constant,
        chase.all_hold,
    ));
    report.value("chase", chase);
    report.value("scheme", scheme.name());
    Ok(report)
}

fn run_couple(cfg: &ExperimentConfig) -> Result<(RunReport, Csv)> {
    let sys = build_system(&cfg.system)?;
    let a = &cfg.analysis;
    let mut report = RunReport::new("couple", config_json(cfg));
    let csv = match parse_experiment(&a.experiment)? {
        "time" => {
            let kernel = build_kernel(&cfg.dynamics, &sys)?;
            let coupler = MonotoneCoupler::new(&sys, SpinOrder::natural(sys.n(), sys.q()))?;
            let ct = coupling_time(&coupler, &kernel, cfg.dynamics.replicas.max(1), a.quantile, a.budget, cfg.seed)?;
            report.value("coupling_time", ct.value);
            report.value("interval95", ct.interval);
            report.value("median", ct.median());
            report.value("grouped_median", ct.grouped_median());
            report.value("censored", ct.censored);
            let rows = ct
                .times
                .iter()
                .enumerate()
                .map(|(r, t)| vec![r.to_string(), t.map_or("censored".into(), |x| x.to_string())])
                .collect();
            Some(("coupling_times.csv".into(), strings(&["replica", "time"]), rows))
        }
        "radius" => {
            let (even, odd) = sys
                .graph()
                .bipartition()
                .ok_or_else(|| Error::NotBipartition("graph is not bipartite".into()))?;
            let r = disagreement_radius(&sys, &even, &odd, a.horizon, a.mc_trials as usize, a.burn_in, cfg.seed)?;
            report.checks.push(Check::new(
                "disagreement-radius",
                "disagreement spreads at most 3 per even-odd step",
                r.max_radius.last().copied().unwrap_or(0) as f64,
                3.0 * a.horizon as f64,
                r.within_bound,
            ));
            let rows = r
                .max_radius
                .iter()
                .enumerate()
                .map(|(t, x)| vec![(t + 1).to_string(), x.to_string()])
                .collect();
            report.value("radius", r);
            Some(("radius.csv".into(), strings(&["step", "max_radius"]), rows))
        }
        "tail" => {
            let g = sys.graph();
            let v = a.vertex.unwrap_or_else(|| (0..g.n()).max_by_key(|&v| (g.degree(v), std::cmp::Reverse(v))).unwrap_or(0));
            let h = component_tail(g, a.theta, v, a.mc_trials, cfg.seed)?;
            let bad = h.violations(4.0);
            report.checks.push(Check::new(
                "component-tail",
                "Pr[|C_S(v)| = k] <= (l/n)(2 e Delta theta)^(k-1) within 4 sigma",
                bad.len() as f64,
                0.0,
                bad.is_empty(),
            ));
            let rows = (0..h.counts.len())
                .map(|k| {
                    vec![
                        k.to_string(),
                        h.counts[k].to_string(),
                        h.frequency(k).to_string(),
                        h.bound[k].to_string(),
                    ]
                })
                .collect();
            report.value("tail", h);
            Some(("tail.csv".into(), strings(&["k", "count", "frequency", "bound"]), rows))
        }
        _ => {
            let shape = grid_shape(&cfg.system.graph)
                .ok_or_else(|| Error::Unsupported("ssm needs a grid:AxB graph".into()))?;
            let radius = a.radius.unwrap_or_else(|| default_distant_radius(a.block_radius, shape.dims.len()));
            let e = rectangle_block_contraction(&sys, &shape, a.block_radius, Some(radius), a.mc_trials, a.burn_in, cfg.seed)?;
            report.checks.push(Check::new(
                "block-contraction",
                "one-step coupled distance below 1 at 95% confidence",
                e.upper95,
                1.0,
                e.upper95 < 1.0,
            ));
            report.value("contraction", e);
            None
        }
    };
    Ok((report, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_exact_config() {
        let cfg = ExperimentConfig::from_toml("command = \"exact\"\n[system]\ngraph = \"path:2\"\nmodel = \"ising:0.7\"\n").unwrap();
        let r = run(&cfg).unwrap();
        assert!(r.all_pass());
        assert!(r.values["stationarity_residual"].as_f64().unwrap() < 1e-12);
    }

    #[test]
    fn eta_report_contains_half() {
        let mut cfg = ExperimentConfig::new(Command::Eta);
        cfg.system.model = format!("ising:{}", 3f64.ln());
        let r = run(&cfg).unwrap();
        assert!((r.values["eta"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_kernel_rejected_with_line() {
        let err = ExperimentConfig::from_toml("command = \"mix\"\n[dynamics]\nkernel = \"metropolis\"\n").unwrap_err();
        assert!(err.to_string().contains("metropolis"));
        let err = ExperimentConfig::from_toml("command = \"mix\"\n\n[system]\ncolour = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = ExperimentConfig::new(Command::Couple);
        cfg.analysis.experiment = "tail".into();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn graph_specs() {
        assert_eq!(parse_graph_spec("grid:2x3").unwrap().edge_count(), 7);
        assert_eq!(parse_graph_spec("cycle:5").unwrap().edge_count(), 5);
        assert!(parse_graph_spec("wheel:5").is_err());
        assert!(grid_shape("grid:8x8").is_some());
    }

    #[test]
    fn repeat_runs_match() {
        let mut cfg = ExperimentConfig::new(Command::Sample);
        cfg.system.graph = "path:3".into();
        cfg.dynamics.replicas = 50;
        let mut a = run(&cfg).unwrap();
        let mut b = run(&cfg).unwrap();
        a.wall_clock_secs = 0.0;
        b.wall_clock_secs = 0.0;
        assert_eq!(a.to_json(), b.to_json());
    }
}
