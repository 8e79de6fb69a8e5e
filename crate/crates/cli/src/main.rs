mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hermite_lab::acceptance::Tier;
use hermite_lab::random_ensembles::Family;
use hermite_lab::LabError;
use serde_json::json;

use config::RunConfig;
use output::Artifacts;

#[derive(Parser, Debug)]
#[command(name = "hlab", version, about = "Hermite spectral and randomized-data experiments")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set solver.N=64` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_tier)]
    tier: Option<Tier>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo loops; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for cached basis tables.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn parse_tier(s: &str) -> std::result::Result<Tier, String> {
    s.parse().map_err(|e: LabError| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Gram deviation of the quadrature-sampled basis.
    BasisCheck(BasisArgs),
    /// Spatial norms of the configured field.
    Norms(BasisArgs),
    /// Smoothing-effect ratios for the field and for random draws.
    Smoothing(BasisArgs),
    /// Lens transform of the linear flow against the free propagator.
    LensCheck(BasisArgs),
    /// Picard solve of the weighted harmonic NLS.
    SolveNlsh(SolverArgs),
    /// Free-space NLS frames via the lens transform.
    SolveNls(SolverArgs),
    /// Asymptotic states and scattering residual.
    Scattering(SolverArgs),
    /// Moment growth of random series.
    Khinchin(EnsembleArgs),
    /// Pairing count B_2p.
    B2p(B2pArgs),
    /// Survival of the random-field norm and of the scalar law.
    Tails(EnsembleArgs),
    /// Probability of the good-data event.
    Omega(EnsembleArgs),
    /// Paley-Zygmund lower bounds.
    PaleyZygmund(EnsembleArgs),
    /// L^p norms of Hermite functions against λ_n^{-ρ(p)}.
    EigenLp(EigenArgs),
    /// MGF, tail envelope and L^q growth.
    Chernoff(EnsembleArgs),
    /// Full acceptance suite at the chosen tier.
    Acceptance(AcceptanceArgs),
}

#[derive(Args, Debug, Default)]
struct BasisArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// Maximal total degree N.
    #[arg(long = "n")]
    max_degree: Option<usize>,
    /// Quadrature nodes per axis.
    #[arg(long)]
    quad: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct SolverArgs {
    /// Nonlinearity exponent (odd, at least 5).
    #[arg(long = "p")]
    nonlinearity_p: Option<u32>,
    /// Sign of the nonlinearity, +1 or -1.
    #[arg(long = "k", allow_hyphen_values = true)]
    k_sign: Option<i32>,
    #[arg(long = "n")]
    max_degree: Option<usize>,
    #[arg(long)]
    time_nodes: Option<usize>,
    /// Multiplier of the initial field.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Switch the nonlinearity off.
    #[arg(long)]
    linear: bool,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct EnsembleArgs {
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct B2pArgs {
    /// Print B_2p for this p.
    #[arg(long)]
    p: Option<u32>,
    /// Largest p in the report sweep.
    #[arg(long)]
    p_max: Option<u32>,
}

#[derive(Args, Debug, Default)]
struct EigenArgs {
    /// Lebesgue exponent in [4, inf].
    #[arg(long)]
    p_exp: Option<f64>,
    #[arg(long)]
    n_max: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct AcceptanceArgs {
    /// Run only these criteria (1-based, comma separated).
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<usize>>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BasisCheck(_) => "basis-check",
            Command::Norms(_) => "norms",
            Command::Smoothing(_) => "smoothing",
            Command::LensCheck(_) => "lens-check",
            Command::SolveNlsh(_) => "solve-nlsh",
            Command::SolveNls(_) => "solve-nls",
            Command::Scattering(_) => "scattering",
            Command::Khinchin(_) => "khinchin",
            Command::B2p(_) => "b2p",
            Command::Tails(_) => "tails",
            Command::Omega(_) => "omega",
            Command::PaleyZygmund(_) => "paley-zygmund",
            Command::EigenLp(_) => "eigen-lp",
            Command::Chernoff(_) => "chernoff",
            Command::Acceptance(_) => "acceptance",
        }
    }

    /// Folds the subcommand flags into the config.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::BasisCheck(a) | Command::Norms(a) | Command::Smoothing(a) | Command::LensCheck(a) => {
                set(&mut cfg.basis.dim, a.dim);
                set_opt(&mut cfg.basis.max_degree, a.max_degree);
                set_opt(&mut cfg.basis.quad_per_axis, a.quad);
            }
            Command::SolveNlsh(a) | Command::SolveNls(a) | Command::Scattering(a) => {
                set(&mut cfg.solver.nonlinearity_p, a.nonlinearity_p);
                set(&mut cfg.solver.k_sign, a.k_sign);
                set(&mut cfg.solver.max_degree, a.max_degree);
                set(&mut cfg.solver.time_nodes, a.time_nodes);
                set_opt(&mut cfg.field.amplitude, a.amplitude);
                cfg.solver.linear_only |= a.linear;
            }
            Command::Khinchin(a)
            | Command::Tails(a)
            | Command::Omega(a)
            | Command::PaleyZygmund(a)
            | Command::Chernoff(a) => {
                set(&mut cfg.ensemble.family, a.family);
                set_opt(&mut cfg.ensemble.gamma, a.gamma);
                set_opt(&mut cfg.experiment.n_samples, a.samples);
            }
            Command::B2p(a) => {
                set_opt(&mut cfg.experiment.p, a.p);
                set_opt(&mut cfg.experiment.p_max, a.p_max);
            }
            Command::EigenLp(a) => {
                set_opt(&mut cfg.experiment.p_exp, a.p_exp);
                set_opt(&mut cfg.experiment.n_max, a.n_max);
            }
            Command::Acceptance(a) => set_opt(&mut cfg.experiment.criteria, a.only.clone()),
        }
    }
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn set_opt<T>(dst: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *dst = v;
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.tier, cli.tier);
    set_opt(&mut cfg.workers, cli.workers);
    set_opt(&mut cfg.out, cli.out.clone());
    set_opt(&mut cfg.cache_dir, cli.cache_dir.clone());
    cli.command.apply(&mut cfg);
    Ok(cfg)
}

/// Outcome of a command: did every verdict pass.
pub struct Outcome {
    pub passed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(w) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("warning: worker pool already initialized: {e}");
        }
    }
    let workers = rayon::current_num_threads();
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    let mut art = match Artifacts::create(&dir) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = commands::run(&cli.command, &cfg, &mut art);
    let status = match &result {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(_) => 2,
    };
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
        let (kind, history) = match e.downcast_ref::<LabError>() {
            Some(le @ (LabError::Divergence { history, .. } | LabError::MaxIterations { history, .. })) => {
                (le.kind(), history.clone())
            }
            Some(le) => (le.kind(), Vec::new()),
            None => ("config", Vec::new()),
        };
        let report = json!({
            "schema": hermite_lab::report::REPORT_SCHEMA,
            "name": name,
            "error": { "kind": kind, "message": format!("{e:#}"), "history": history },
        });
        if let Err(w) = art.json("error.json", &report) {
            eprintln!("error: {w:#}");
        }
    }
    let dir = art.dir().to_path_buf();
    if let Err(e) = art.finish(name, &cfg, workers, status) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    eprintln!("artifacts in {}", dir.display());
    ExitCode::from(status as u8)
}
