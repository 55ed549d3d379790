use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use afcsim::config::{load_config, validate_config, ConfigError, ExperimentConfig};
use afcsim::scenario::{run_scenario, RunOptions, ScenarioError};
use afcsim::timestamps::Format;
use afcsim::ExecMode;

/// Simulate and analyze heralded single-photon storage in an AFC memory.
///
/// Settings are resolved in this order, later wins: built-in defaults, the
/// config file, `--set` assignments, then the dedicated flags.
#[derive(Debug, Parser)]
#[command(name = "afcsim", version)]
struct Cli {
    /// Scenario config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// simulate, analyze, simulate+analyze or sweep.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Timestamp format for written files and, in analyze mode, for input files.
    #[arg(long, value_name = "csv|binary")]
    format: Option<Format>,
    /// Remove the filter cavity from the idler arm.
    #[arg(long)]
    no_filter_cavity: bool,
    /// Storage time in ns; the comb spacing follows.
    #[arg(long, value_name = "NS")]
    tau: Option<f64>,
    /// Pump power in mW.
    #[arg(long, value_name = "MW")]
    pump_mw: Option<f64>,
    /// Timestamp file to analyze (repeatable).
    #[arg(long, value_name = "PATH")]
    timestamps: Vec<PathBuf>,
    /// Extra `key=value` assignment using config-file keys (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run on a single thread.
    #[arg(long)]
    sequential: bool,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    for assignment in &cli.set {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(mode) = &cli.mode {
        cfg.apply("scenario.mode", mode)?;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(format) = cli.format {
        cfg.run.format = format;
    }
    if cli.no_filter_cavity {
        cfg.filter.cavity = false;
    }
    if let Some(tau) = cli.tau {
        cfg.apply("memory.storage_time", &format!("{tau} ns"))?;
    }
    if let Some(p) = cli.pump_mw {
        cfg.apply("source.pump", &format!("{p} mW"))?;
    }
    validate_config(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };

    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("afcsim: configuration error: {e}");
            return ExitCode::from(1);
        }
    };
    let opts = RunOptions {
        out_dir: cli.out.clone(),
        timestamps: cli.timestamps.clone(),
        timestamp_format: cli.format,
        exec: if cli.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::default()
        },
    };
    match run_scenario(&cfg, &opts) {
        Ok(report) => {
            for f in &report.files {
                log::info!("wrote {}", f.display());
            }
            println!("{} files written to {}", report.files.len(), cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("afcsim: {e}");
            report_code(&e)
        }
    }
}

fn report_code(e: &ScenarioError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
