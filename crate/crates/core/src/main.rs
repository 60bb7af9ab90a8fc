use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochsynth::error::{exit, Error};
use stochsynth::io::config::Config;
use stochsynth::io::pipeline::{self, Overrides, Profile};
use stochsynth::sim::DisturbanceMode;
use stochsynth::synthesis::SynthesisMode;

/// Finite MDP abstraction and controller synthesis for stochastic control
/// systems.
///
/// Exit codes: 0 success, 2 usage, 3 configuration, 4 memory budget,
/// 5 numeric (dynamics or noise evaluation), 6 file I/O, 7 result file
/// format or mismatch.
#[derive(Parser)]
#[command(name = "stochsynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the transition matrix; optionally dump it.
    Abstract {
        #[command(flatten)]
        common: Common,
        /// Write the raw matrix to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Synthesize a controller and write the result file.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop and write trajectories as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use a stored result instead of synthesizing.
        #[arg(long)]
        result: Option<PathBuf>,
        /// Trajectory CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_disturbance)]
        disturbance: Option<DisturbanceMode>,
    },
    /// Write the transition matrix as an explicit model-checker file.
    ExportPrism {
        #[command(flatten)]
        common: Common,
    },
    /// Print abstraction sizes and memory without building anything.
    EstimateMem {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    config: PathBuf,
    /// Worker threads; 1 is the serial reference path, 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SynthesisMode>,
    /// Memory budget in bytes for the stored matrix.
    #[arg(long)]
    mem_budget: Option<u128>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Output path (result file, or the model-checker file for export-prism).
    #[arg(long, short)]
    output: Option<String>,
    /// Override the number of time steps.
    #[arg(long)]
    horizon: Option<usize>,
}

fn parse_mode(s: &str) -> Result<SynthesisMode, String> {
    SynthesisMode::parse(s).ok_or_else(|| format!("unknown mode `{s}` (matrix, ofa, auto)"))
}

fn parse_disturbance(s: &str) -> Result<DisturbanceMode, String> {
    DisturbanceMode::parse(s).ok_or_else(|| format!("unknown disturbance mode `{s}` (random, worst-case)"))
}

impl Common {
    fn load(&self, extra: Overrides) -> Result<Config, Error> {
        let mut cfg = Config::load(&self.config)?;
        let o = Overrides {
            threads: self.threads,
            mode: self.mode,
            mem_budget: self.mem_budget,
            seed: self.seed,
            runs: self.runs,
            output: self.output.clone(),
            horizon: self.horizon,
            ..extra
        };
        o.apply(&mut cfg);
        // re-validate what the overrides may have changed
        cfg.build_spec()
            .validate(cfg.states.dim())
            .map_err(|e| Error::Config(stochsynth::io::config::ConfigError::Model(e.to_string())))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Profile, Error> {
    match cli.command {
        Command::Abstract { common, dump } => pipeline::run_abstract(&common.load(Overrides::default())?, dump.as_deref()),
        Command::Synthesize { common } => pipeline::run_synthesize(&common.load(Overrides::default())?).map(|(_, p)| p),
        Command::Simulate {
            common,
            result,
            csv,
            x0,
            disturbance,
        } => {
            let cfg = common.load(Overrides {
                x0,
                disturbance_mode: disturbance,
                ..Overrides::default()
            })?;
            pipeline::run_simulate(&cfg, result.as_deref(), csv.as_deref()).map(|(_, p)| p)
        }
        Command::ExportPrism { common } => {
            let out = common
                .output
                .clone()
                .ok_or_else(|| Error::Usage("export-prism needs --output".into()))?;
            let mut cfg = common.load(Overrides::default())?;
            cfg.exec.output = None;
            pipeline::run_export_prism(&cfg, Path::new(&out))
        }
        Command::EstimateMem { common } => pipeline::estimate(&common.load(Overrides::default())?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(profile) => {
            print!("{}", profile.render());
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
