//! `hydrobrackets`: check bracket classes, build flat charts, run the
//! hodograph solver and Jacobi sweeps on JSON system definitions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "HYDROBRACKETS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hydrobrackets", version, about = "Poisson brackets of hydrodynamic type")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Tolerance for residuals of exactly evaluated identities.
    #[arg(long, global = true)]
    pub tol_zero: Option<f64>,
    /// Tolerance for ODE-integrated charts.
    #[arg(long, global = true)]
    pub tol_flat: Option<f64>,
    /// Grid size: Jacobi nodes, flat-chart resolution or Goursat cells.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Seed for sample points and functional triples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (JSON report, or CSV data for flat-coords/hodograph).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Solve even when the compatibility check fails.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Dn,
    Mf,
    Fer,
    Liouville,
    Auto,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify the bracket conditions of one class.
    Check {
        #[arg(long, value_enum, default_value = "auto")]
        class: ClassArg,
        /// Config file, or the name of a built-in example.
        config: String,
    },
    /// Develop flat coordinates of the metric and tabulate them.
    FlatCoords { config: String },
    /// Solve the diagonal system by the generalized hodograph method.
    Hodograph { config: String },
    /// Jacobi-identity residuals over seeded functional triples.
    Jacobi { config: String },
    /// List built-in examples, or print one.
    Examples { name: Option<String> },
}

/// Outcome of a subcommand that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    configure_threads()?;
    let g = &cli.global;
    match &cli.command {
        Command::Check { class, config } => commands::check(g, *class, config),
        Command::FlatCoords { config } => commands::flat_coords(g, config),
        Command::Hodograph { config } => commands::hodograph(g, config),
        Command::Jacobi { config } => commands::jacobi(g, config),
        Command::Examples { name } => commands::examples(g, name.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
