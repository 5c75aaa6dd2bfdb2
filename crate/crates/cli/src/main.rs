use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod export;

#[derive(Parser)]
#[command(name = "trslds", version, about = "Tree-structured recurrent switching linear dynamical systems")]
struct Cli {
    /// Worker threads for per-trial work (defaults to one per core).
    #[arg(long, global = true, env = "TRSLDS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum System {
    Fhn,
    Lorenz,
    Nascar,
    NascarTree,
    Lds,
    Bernoulli,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExportKind {
    VectorField,
    Partitions,
    Trace,
    Trajectories,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Which {
    Best,
    Last,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Gaussian,
    Bernoulli,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate {
        system: System,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth output; defaults to `<out>.truth.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Number of trajectories.
        #[arg(long)]
        n: Option<usize>,
        /// Points per trajectory.
        #[arg(long = "T")]
        points: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observation dimension (lorenz, lds, bernoulli).
        #[arg(long)]
        d_y: Option<usize>,
        /// Latent dimension (lds).
        #[arg(long)]
        d_x: Option<usize>,
        /// Observation noise variance (lorenz).
        #[arg(long)]
        noise_var: Option<f64>,
    },
    /// Initialise and run the Gibbs sampler.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total Gibbs iterations (overrides the config).
        #[arg(long)]
        iters: Option<usize>,
        /// Keep the last N iterations (sets the burn-in).
        #[arg(long)]
        keep: Option<usize>,
        /// Train on all but the last H points of each trial.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Model label used in reports.
        #[arg(long, default_value = "trslds")]
        name: String,
        #[arg(long)]
        quiet: bool,
    },
    /// k-step forecasts on the final points of each trial.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k_max: Option<usize>,
        /// Points at the end of each trial used as forecast targets
        /// (defaults to k_max).
        #[arg(long)]
        holdout: Option<usize>,
        /// Output prefix; writes `<out>.csv` and `<out>.json`.
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Vector fields, partitions, traces or latent paths as CSV.
    Export {
        #[arg(long)]
        model: PathBuf,
        what: ExportKind,
        #[arg(long)]
        out: PathBuf,
        /// Tree depth for vector fields (all depths if omitted).
        #[arg(long)]
        depth: Option<usize>,
        /// Grid bounds `xmin,xmax,ymin,ymax`; defaults to the latent range.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 25)]
        nx: usize,
        #[arg(long, default_value_t = 25)]
        ny: usize,
        /// Trailing-average window for traces.
        #[arg(long, default_value_t = 100)]
        window: usize,
        /// Retained sample to export.
        #[arg(long, value_enum, default_value_t = Which::Best)]
        sample: Which,
    },
    /// Joint-distribution test of the sampler on a tiny model.
    Geweke {
        #[arg(long, default_value_t = 5000)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Kind::Gaussian)]
        kind: Kind,
        /// Run the deliberately broken sampler instead.
        #[arg(long)]
        mutant: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<trslds::Error>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!(trslds::Error::invalid("thread count must be positive"));
        }
        trslds::set_threads(n)?;
    }
    match cli.command {
        Command::Simulate { system, out, truth, n, points, seed, d_y, d_x, noise_var } => {
            commands::simulate(system, &out, truth, n, points, seed, d_y, d_x, noise_var)
        }
        Command::Fit { data, config, out, iters, keep, holdout, seed, name, quiet } => {
            commands::fit(&data, &config, &out, iters, keep, holdout, seed, &name, quiet)
        }
        Command::Eval { model, data, k_max, holdout, out, seed } => {
            commands::eval(&model, &data, k_max, holdout, &out, seed)
        }
        Command::Export { model, what, out, depth, grid, nx, ny, window, sample } => {
            export::export(&model, what, &out, depth, grid, nx, ny, window, sample)
        }
        Command::Geweke { rounds, seed, kind, mutant, out } => commands::geweke(rounds, seed, kind, mutant, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
