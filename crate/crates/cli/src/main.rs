use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use feos_core::{Error, ErrorKind};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "feos", version, about = "Operator-splitting thin-film solver")]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by every simulation subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; its keys override the subcommand's defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (same as `--set out_dir=DIR`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override one config key, e.g. `--set J=256`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single evolution from a config.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Spatial or temporal convergence study on the trigonometric test problem.
    Converge {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        study: commands::StudyArgs,
    },
    /// Coarsening run from seeded random data with power-law fits.
    Coarsen {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        fit: commands::WindowArgs,
    },
    /// One-dimensional runs over the δ presets.
    Example1 {
        #[command(flatten)]
        config: ConfigArgs,
        /// Preset numbers to run (1-4); all when omitted.
        #[arg(long = "preset", value_parser = clap::value_parser!(u8).range(1..=4))]
        presets: Vec<u8>,
    },
    /// Power-law fit of one column of a CSV file against another.
    Fit {
        /// Input CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Column holding the values to fit.
        #[arg(long, default_value = "energy")]
        column: String,
        /// Column holding time.
        #[arg(long, default_value = "t")]
        time_column: String,
        /// Fit window; samples strictly inside are used. Defaults to every
        /// sample with positive time.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        window: Vec<f64>,
        /// Write the fit as CSV here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Runtime => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Run { config } => commands::run(&config),
        Command::Converge { config, study } => commands::converge(&config, &study),
        Command::Coarsen { config, fit } => commands::coarsen(&config, &fit),
        Command::Example1 { config, presets } => commands::example1(&config, &presets),
        Command::Fit {
            input,
            column,
            time_column,
            window,
            out,
        } => commands::fit(&input, &column, &time_column, &window, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
