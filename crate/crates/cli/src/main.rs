use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochbench_cli::pipeline::{cmd_all, cmd_gen, cmd_profile, cmd_report, cmd_run, cmd_strategies};
use stochbench_cli::{CliError, Options, RunConfig};

#[derive(Parser)]
#[command(name = "stochbench", version, about = "Benchmark parameterized stochastic Ising solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planted Wishart instances and a manifest.
    Gen(Common),
    /// Run solvers over instances x parameter points (resumable).
    Run(Common),
    /// Bootstrap sample sets into performance profiles.
    Profile(Common),
    /// Derive virtual best, fixed and explore-exploit strategies.
    Strategies(Common),
    /// Assemble report CSVs and the JSON index.
    Report(Common),
    /// Run every stage in order.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(command: Command) -> Result<(), CliError> {
    let (Command::Gen(c)
    | Command::Run(c)
    | Command::Profile(c)
    | Command::Strategies(c)
    | Command::Report(c)
    | Command::All(c)) = &command;
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.bootstrap.seed = seed;
    }
    if let Some(jobs) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let opts = Options { force: c.force };
    match command {
        Command::Gen(_) => cmd_gen(&cfg, opts).map(|_| ()),
        Command::Run(_) => cmd_run(&cfg, opts).map(|s| println!("computed {}, kept {}", s.computed, s.skipped)),
        Command::Profile(_) => cmd_profile(&cfg, opts),
        Command::Strategies(_) => cmd_strategies(&cfg, opts),
        Command::Report(_) => cmd_report(&cfg, opts).map(|_| ()),
        Command::All(_) => cmd_all(&cfg, opts).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
