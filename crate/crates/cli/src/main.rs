//! `pphoton`: command-line front end for the parametric-photon simulator.
//!
//! Exit codes: 0 ok, 1 I/O or other failure, 2 config error, 3 numerical
//! invariant violation, 4 estimator non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parametric_photon::config::ExperimentConfig;
use parametric_photon::runners::{execute, Command};
use parametric_photon::Error;

#[derive(Parser)]
#[command(name = "pphoton", version, about = "Shaped single-photon emission and tomography simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run directory; defaults to `<run.output_dir>/<command>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `detect.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sideband coupling and shift tables with linear and quadratic fits.
    DeviceCalc(Common),
    /// Emitted field, populations and symmetry factor of one emission.
    Emit(Common),
    /// Captured-mode moments over the configured Rabi angles.
    SweepRabi(Common),
    /// Heterodyne state tomography of the captured mode.
    TomoState(Common),
    /// Process tomography of the emission channel.
    TomoProcess(Common),
    /// Two-node state transfer through a lossy line.
    PitchCatch(Common),
    /// Thermal excited-state population from four readout sequences.
    ThermalPop(Common),
    /// Prints the default config as TOML.
    DefaultConfig,
}

fn run(cmd: Command, common: Common) -> Result<Option<String>, Error> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.detect.seed = seed;
    }
    let dir = common.out.unwrap_or_else(|| cfg.run.output_dir.join(cmd.name()));
    let (manifest, out) = execute(cmd, &cfg, &dir)?;
    println!("{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
    eprintln!("{cmd}: {} artifacts in {} (run hash {})", manifest.artifacts.len(), dir.display(), manifest.run_hash);
    Ok(out.non_convergence)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Cmd::DeviceCalc(c) => (Command::DeviceCalc, c),
        Cmd::Emit(c) => (Command::Emit, c),
        Cmd::SweepRabi(c) => (Command::SweepRabi, c),
        Cmd::TomoState(c) => (Command::TomoState, c),
        Cmd::TomoProcess(c) => (Command::TomoProcess, c),
        Cmd::PitchCatch(c) => (Command::PitchCatch, c),
        Cmd::ThermalPop(c) => (Command::ThermalPop, c),
        Cmd::DefaultConfig => {
            return match ExperimentConfig::default().to_toml_string() {
                Ok(s) => {
                    print!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cmd, common) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
