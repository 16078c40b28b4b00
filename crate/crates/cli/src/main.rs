use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relay_esc_cli::commands::{self, SweepParam};

/// Simulate stochastic relay extremum-seeking control.
#[derive(Parser)]
#[command(name = "relay-esc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv and metrics.json.
    Run {
        /// Scenario file or preset name.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a scenario over a list of parameter values and seeds.
    Sweep {
        /// Scenario file or preset name.
        config: String,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// List built-in scenarios.
    Presets {
        /// Print this preset as a scenario file.
        #[arg(long)]
        show: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run { config, seed, out } => commands::run(&config, seed, &out),
        Command::Sweep {
            config,
            param,
            values,
            seeds,
            out,
        } => commands::sweep(&config, param, &values, seeds, &out),
        Command::Presets { show } => commands::presets(show.as_deref()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("relay-esc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
