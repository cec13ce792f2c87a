use clap::{Parser, Subcommand};
use lbsn_cli::{commands, Scenario};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulator of LBSN distance oracles, the localization attacks that break
/// them, and the grid-reference mitigation. Exit codes: 0 success,
/// 1 configuration error, 2 attack failure.
#[derive(Parser)]
#[command(name = "lbsn-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One synchronous localization attack against the first victim.
    Attack {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the policy profile (momo, skout, wechat-dense, ...).
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-week tracking campaign with periodic attack launches.
    Track {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Privacy/utility sweep of the grid reference system plus an attack
    /// rerun against the protected oracle.
    Mitigate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the scenario's synthetic traces as CSV files.
    Gen {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the scenario's oracle over HTTP until interrupted.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn load(
    path: &std::path::Path,
    seed: Option<u64>,
    profile: Option<String>,
) -> Result<Scenario, commands::CliError> {
    let mut scenario = Scenario::load(path).map_err(commands::CliError::from)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(profile) = profile {
        scenario.profile = Some(profile);
        scenario.policy = None;
        scenario
            .policy_resolved()
            .map_err(commands::CliError::from)?;
    }
    Ok(scenario)
}

fn run() -> Result<(), commands::CliError> {
    match Cli::parse().command {
        Command::Attack { scenario, seed, profile, out } => {
            let scenario = load(&scenario, seed, profile)?;
            let out = commands::default_out_dir(&scenario, out.as_deref());
            let report = commands::cmd_attack(&scenario, &out)?;
            println!(
                "attack: error {:.2} m in {} queries ({} simulated seconds)",
                report.error_m.unwrap_or(f64::NAN),
                report.queries_total,
                report.simulated_wall_s
            );
            Ok(())
        }
        Command::Track { scenario, seed, profile, out } => {
            let scenario = load(&scenario, seed, profile)?;
            let out = commands::default_out_dir(&scenario, out.as_deref());
            let report = commands::cmd_track(&scenario, &out)?;
            for victim in &report.victims {
                println!(
                    "track {}: {} launches, {} failures, mean error {:.1} m",
                    victim.user_id,
                    victim.launches,
                    victim.failures,
                    victim.errors.as_ref().map_or(f64::NAN, |e| e.mean_m)
                );
            }
            Ok(())
        }
        Command::Mitigate { scenario, seed, profile, out } => {
            let scenario = load(&scenario, seed, profile)?;
            let out = commands::default_out_dir(&scenario, out.as_deref());
            let report = commands::cmd_mitigate(&scenario, &out)?;
            println!(
                "mitigate: {} curve points per mode, attack median error {} at cell {} m",
                report.uniform.len(),
                report
                    .degradation
                    .median_error_m
                    .map_or("unbounded".into(), |m| format!("{m:.1} m")),
                report.degradation.cell_size_m
            );
            Ok(())
        }
        Command::Gen { scenario, seed, out } => {
            let scenario = load(&scenario, seed, None)?;
            let out = commands::default_out_dir(&scenario, out.as_deref());
            let report = commands::cmd_gen(&scenario, &out)?;
            for (file, rows) in report.files.iter().zip(&report.rows) {
                println!("gen: {file} ({rows} fixes)");
            }
            Ok(())
        }
        Command::Serve { scenario, seed, profile, bind } => {
            let scenario = load(&scenario, seed, profile)?;
            commands::cmd_serve(&scenario, &bind)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
