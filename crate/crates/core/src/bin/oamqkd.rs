use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oam_qkd::scenario::{
    run_crosstalk, run_optimize_mu, run_qkd, run_stability, write_outputs, Preset, ScenarioConfig,
};
use oam_qkd::{Error, Result};

/// OAM-multiplexed time-bin QKD simulator.
#[derive(Parser)]
#[command(name = "oamqkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; omitted fields take preset defaults.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_parser = ["2mode", "3mode"])]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Mode crosstalk matrix by power and by time of flight.
    Crosstalk(Common),
    /// Per-mode QBER and secret key rate.
    Qkd {
        #[command(flatten)]
        common: Common,
        /// Simulated pulses per mode, scaled up to the block; full block if omitted.
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// QBER time series over the stability run.
    Stability(Common),
    /// Grid search for the intensities of one mode.
    OptimizeMu {
        #[command(flatten)]
        common: Common,
        /// Mode to optimize; first configured mode if omitted.
        #[arg(long, allow_hyphen_values = true)]
        mode: Option<i32>,
    },
}

fn load(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(p)) => p.parse::<Preset>()?.config(),
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<PathBuf> {
    let (out, files) = match cli.command {
        Command::Crosstalk(c) => {
            let cfg = load(&c)?;
            (c.out, run_crosstalk(&cfg)?.files(&cfg)?)
        }
        Command::Qkd { common, pulses } => {
            let mut cfg = load(&common)?;
            if pulses.is_some() {
                cfg.simulation.pulses_per_point = pulses;
                cfg.validate()?;
            }
            let modes = cfg.mode_numbers();
            (common.out, run_qkd(&cfg, &modes)?.files(&cfg)?)
        }
        Command::Stability(c) => {
            let cfg = load(&c)?;
            (c.out, run_stability(&cfg)?.files(&cfg)?)
        }
        Command::OptimizeMu { common, mode } => {
            let cfg = load(&common)?;
            let mode = match mode {
                Some(m) => m,
                None => cfg.modes.first().map(|m| m.mode).ok_or(Error::EmptyTargets)?,
            };
            (common.out, run_optimize_mu(&cfg, mode)?.files(&cfg)?)
        }
    };
    write_outputs(&out, &files)?;
    Ok(out)
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string()),
    };
    match run(cli) {
        Ok(out) => {
            println!("{}", serde_json::json!({ "status": "ok", "out": out }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
