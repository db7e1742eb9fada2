use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinmix::experiment::{run, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "spinmix", version, about = "Gibbs sampling dynamics and exact mixing analysis on small spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// TOML config; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (the SEED environment variable also works).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Largest state space enumerated exactly.
    #[arg(long, global = true)]
    cap_states: Option<u64>,
    /// Directory for report.json and CSV output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    graph: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Boundary pinning, e.g. `0:1,4:0`.
    #[arg(long, global = true)]
    boundary: Option<String>,
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Also write CSV tables next to the report.
    #[arg(long, global = true)]
    csv: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run replicas of a chain and compare marginals with the exact law.
    Sample {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Exact transition matrix: stationarity, gap, mixing time.
    Exact {
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Spectral independence constant and related bounds.
    Eta {
        #[arg(long)]
        max_pinned: Option<usize>,
        /// Pinning for the influence matrix and local walk.
        #[arg(long)]
        tau: Option<String>,
    },
    /// Modified log-Sobolev estimate.
    Mix {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Search for entropy factorization violations.
    Factorize {
        /// at, ubf, kpf, gbf or edge-spin.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        constant: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Coupling experiments: time, radius, tail or ssm.
    Couple {
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        block_radius: Option<usize>,
    },
    /// Run the full acceptance suite.
    Accept,
}

impl Cmd {
    fn command(&self) -> Command {
        match self {
            Cmd::Sample { .. } => Command::Sample,
            Cmd::Exact { .. } => Command::Exact,
            Cmd::Eta { .. } => Command::Eta,
            Cmd::Mix { .. } => Command::Mix,
            Cmd::Factorize { .. } => Command::Factorize,
            Cmd::Couple { .. } => Command::Couple,
            Cmd::Accept => Command::Accept,
        }
    }
}

fn resolve(cli: Cli) -> spinmix::Result<ExperimentConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => {
            let mut c = ExperimentConfig::from_file(p)?;
            c.command = cli.command.command();
            c
        }
        None => ExperimentConfig::new(cli.command.command()),
    };
    let g = cli.global;
    if let Some(s) = std::env::var("SEED").ok().and_then(|s| s.parse().ok()) {
        cfg.seed = s;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(c) = g.cap_states {
        cfg.caps.states = c;
    }
    if g.out.is_some() {
        cfg.output.dir = g.out;
    }
    cfg.output.csv |= g.csv;
    if let Some(x) = g.graph {
        cfg.system.graph = x;
    }
    if let Some(x) = g.model {
        cfg.system.model = x;
    }
    if g.boundary.is_some() {
        cfg.system.boundary = g.boundary;
    }
    if let Some(x) = g.kernel {
        cfg.dynamics.kernel = x;
    }
    let a = &mut cfg.analysis;
    match cli.command {
        Cmd::Sample { steps, replicas } => {
            if let Some(s) = steps {
                cfg.dynamics.steps = s;
            }
            if let Some(r) = replicas {
                cfg.dynamics.replicas = r;
            }
        }
        Cmd::Exact { eps } => {
            if let Some(e) = eps {
                a.eps = e;
            }
        }
        Cmd::Eta { max_pinned, tau } => {
            a.max_pinned = max_pinned.or(a.max_pinned);
            a.tau = tau.or(a.tau.take());
        }
        Cmd::Mix { trials } => {
            if let Some(t) = trials {
                a.trials = t;
            }
        }
        Cmd::Factorize { scheme, ell, constant, trials } => {
            if let Some(s) = scheme {
                a.scheme = s;
            }
            a.ell = ell.or(a.ell);
            a.constant = constant.or(a.constant);
            if let Some(t) = trials {
                a.trials = t;
            }
        }
        Cmd::Couple { experiment, theta, trials, replicas, block_radius } => {
            if let Some(e) = experiment {
                a.experiment = e;
            }
            if let Some(t) = theta {
                a.theta = t;
            }
            if let Some(t) = trials {
                a.mc_trials = t;
            }
            if let Some(r) = block_radius {
                a.block_radius = r;
            }
            if let Some(r) = replicas {
                cfg.dynamics.replicas = r;
            }
        }
        Cmd::Accept => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cfg = match resolve(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    match run(&cfg) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            for c in &report.checks {
                let _ = writeln!(out, "{c}");
            }
            if cfg.output.dir.is_none() {
                let _ = writeln!(out, "{}", report.to_json());
            }
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
