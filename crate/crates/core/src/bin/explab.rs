//! Experiment runner: reproduces the GP comparison and the two pendulum
//! DAgger studies from JSON configs, writing CSV/SVG artifacts plus a
//! manifest of checksums.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ensemble_dagger::experiments::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "explab", about = "Run a seeded experiment and write CSV/SVG artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config; its "experiment" tag must match the
    /// subcommand.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory for artifacts and the manifest.
    #[arg(long, env = "EXPLAB_OUT")]
    out: PathBuf,

    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; defaults to all cores.
    #[arg(long, env = "EXPLAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// GP vs ensembles vs MC-dropout on a 1-d regression task.
    GpCompare(RunArgs),
    /// Budgeted permitted-volume comparison of the doubt and discrepancy rules.
    PendulumBudget(RunArgs),
    /// Fixed-threshold rules over repeated DAgger runs.
    PendulumFixed(RunArgs),
}

impl Command {
    fn expected(&self) -> &'static str {
        match self {
            Command::GpCompare(_) => "gp_compare",
            Command::PendulumBudget(_) => "pendulum_budget",
            Command::PendulumFixed(_) => "pendulum_fixed",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::GpCompare(a) | Command::PendulumBudget(a) | Command::PendulumFixed(a) => a,
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_EXPERIMENT: u8 = 3;

fn load_config(command: &Command) -> Result<ExperimentConfig, String> {
    let args = command.args();
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_path(path).map_err(|e| e.to_string())?,
        // No config file: the experiment's reference defaults.
        None => {
            let json = format!(r#"{{"experiment": "{}"}}"#, command.expected());
            serde_json::from_str(&json).map_err(|e| e.to_string())?
        }
    };
    if config.name() != command.expected() {
        return Err(format!(
            "config is for experiment '{}' but subcommand expects '{}'",
            config.name(),
            command.expected()
        ));
    }
    if let Some(seed) = args.seed {
        config.set_master_seed(seed);
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let args = cli.command.args();
    if let Some(jobs) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("config error: cannot set {jobs} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match experiments::run(&config, &args.out) {
        Ok(manifest) => {
            println!(
                "{} finished in {:.1}s; {} artifacts in {}",
                config.name(),
                manifest.wall_clock_secs,
                manifest.files.len(),
                args.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("experiment failed: {e}");
            ExitCode::from(EXIT_EXPERIMENT)
        }
    }
}
