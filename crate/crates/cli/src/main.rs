//! `rwre`: runs one experiment from a JSON config and writes its artifacts.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;
mod run;

use clap::{Args, Parser, Subcommand};
use config::{Experiment, Kind, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random walks in random environment: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the model's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to `out/<kind>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Site kernels of one replica over a box.
    EnvDump(RunArgs),
    /// Quenched walks and where they stopped.
    Walk(RunArgs),
    /// Exact exit probabilities of a region.
    Solve(RunArgs),
    /// Backward exit decay scan.
    TGamma(RunArgs),
    /// Effective criterion at one box and exponent.
    Criterion(RunArgs),
    /// Effective criterion over a grid of lengths and exponents.
    CriterionSearch(RunArgs),
    /// Band decomposition of the criterion expectation.
    Bands(RunArgs),
    /// Multiscale scale ladder.
    Ladder(RunArgs),
    /// Good/bad block census along the ladder.
    Census(RunArgs),
    /// Fraction of environments with atypically small right exit.
    Tails(RunArgs),
    /// Exit-point floor and conditioned variance of a block.
    Floor(RunArgs),
    /// Gap between the direction estimate and its restriction.
    Direction(RunArgs),
    /// Transversal fluctuation and backtrack tail.
    Fluctuation(RunArgs),
    /// Intersections of two independent walks in a block.
    Intersections(RunArgs),
    /// Local limit discrepancies of a lattice law.
    Llt(RunArgs),
    /// Smoothness of the annealed exit kernel.
    ExitKernel(RunArgs),
}

impl Command {
    fn split(self) -> (Kind, RunArgs) {
        match self {
            Command::EnvDump(a) => (Kind::EnvDump, a),
            Command::Walk(a) => (Kind::Walk, a),
            Command::Solve(a) => (Kind::Solve, a),
            Command::TGamma(a) => (Kind::TGamma, a),
            Command::Criterion(a) => (Kind::Criterion, a),
            Command::CriterionSearch(a) => (Kind::CriterionSearch, a),
            Command::Bands(a) => (Kind::Bands, a),
            Command::Ladder(a) => (Kind::Ladder, a),
            Command::Census(a) => (Kind::Census, a),
            Command::Tails(a) => (Kind::Tails, a),
            Command::Floor(a) => (Kind::Floor, a),
            Command::Direction(a) => (Kind::Direction, a),
            Command::Fluctuation(a) => (Kind::Fluctuation, a),
            Command::Intersections(a) => (Kind::Intersections, a),
            Command::Llt(a) => (Kind::Llt, a),
            Command::ExitKernel(a) => (Kind::ExitKernel, a),
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            Failure::Config(m) => ("config", m, 2),
            Failure::Runtime(m) => ("runtime", m, 1),
        };
        eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
        ExitCode::from(code)
    }
}

fn execute(kind: Kind, args: RunArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let overrides = Overrides { seed: args.seed, workers: args.workers, out: args.out };
    let exp = Experiment::parse(&text, &overrides).map_err(Failure::Config)?;
    if exp.raw.kind != kind {
        return Err(Failure::Config(format!(
            "config is for kind {} but the subcommand is {}",
            exp.raw.kind.name(),
            kind.name()
        )));
    }
    let workers = exp.raw.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let clock = Instant::now();
    let artifacts = pool.install(|| run::run(&exp)).map_err(|e| {
        if run::is_config_error(&e) {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    })?;
    let info = output::RunInfo {
        kind: kind.name(),
        config_sha256: output::sha256_hex(&exp.canonical_json()),
        seed: exp.raw.model.as_ref().map(|m| m.seed),
        workers,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
    };
    let dir = exp.raw.out.clone().unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    output::emit(&dir, &artifacts, &info).map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Config(e.to_string()).report(),
    };
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
