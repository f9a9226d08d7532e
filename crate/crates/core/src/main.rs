use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use colliphase::cli;

#[derive(Parser)]
#[command(
    name = "colliphase",
    about = "Collective multi-photon interference simulator and analysis pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form four-point fringe value for a phase setting.
    Predict {
        /// Entangled-pair phase chi (radians, `pi` literals allowed).
        #[arg(long, default_value = "0")]
        chi: String,
        /// Mode-1 superposition phase varphi.
        #[arg(long, default_value = "0")]
        varphi: String,
        /// Mode-4 superposition phase theta.
        #[arg(long, default_value = "0")]
        theta: String,
    },
    /// Run the phase scan pipeline from a JSON config.
    Scan {
        #[arg(long)]
        config: PathBuf,
        /// Run only the background scan with this source (1 or 2) blocked.
        #[arg(long)]
        blocked: Option<u8>,
    },
    /// Reconstruct the ten network parameters from single-source rates.
    Calibrate {
        /// JSON file with `blocked_source1` / `blocked_source2` rate maps.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Check the N-particle generalization of the scheme.
    CheckN {
        #[arg(long, default_value_t = 6)]
        particles: usize,
        #[arg(long, default_value_t = 31)]
        grid_points: usize,
        #[arg(long, default_value_t = 12)]
        budget: usize,
    },
    /// Cross-check exchange-operator and threshold-series identities.
    Oracle {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn run(command: Command) -> colliphase::Result<bool> {
    match command {
        Command::Predict { chi, varphi, theta } => {
            cli::cmd_predict(
                cli::parse_angle(&chi)?,
                cli::parse_angle(&varphi)?,
                cli::parse_angle(&theta)?,
            )?;
            Ok(true)
        }
        Command::Scan { config, blocked } => {
            cli::cmd_scan(&config, blocked)?;
            Ok(true)
        }
        Command::Calibrate { targets, config } => {
            cli::cmd_calibrate(&targets, &config)?;
            Ok(true)
        }
        Command::CheckN {
            particles,
            grid_points,
            budget,
        } => {
            cli::cmd_check_n(particles, grid_points, budget)?;
            Ok(true)
        }
        Command::Oracle { seed, trials } => cli::cmd_oracle(seed, trials),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: oracle cross-checks failed");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
