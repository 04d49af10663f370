//! Experiment runner CLI: parse a TOML sweep config, execute the
//! scenario over a bounded worker pool, and emit CSV tables and SVG
//! charts. Exit codes: 0 success, 1 config error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ddpilot::harness::{self, ExperimentSpec, Scenario};

#[derive(Parser)]
#[command(name = "ddpilot", about = "Delay-Doppler unified pilot experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the Monte-Carlo trial count per sweep point.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker thread count (default: all cores). Results are identical
    /// for any value, including 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario described by a TOML config file.
    Run { config: PathBuf },
    /// Run the fixed three-target detection demo with default parameters.
    Demo3,
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the version.
    Version,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn load_spec(cli: &Cli, config: Option<&PathBuf>) -> Result<ExperimentSpec, u8> {
    let mut spec = match config {
        Some(path) => harness::parse_config_file(path).map_err(|e| {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        })?,
        None => ExperimentSpec { scenario: Scenario::Demo3Targets, ..ExperimentSpec::default() },
    };
    if let Some(seed) = cli.seed {
        spec.master_seed = seed;
    }
    if let Some(trials) = cli.trials {
        spec.trials = trials;
    }
    if let Some(out) = &cli.out {
        spec.out_dir = out.clone();
    }
    match spec.validate() {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(spec)
        }
        Err(e) => {
            eprintln!("config error: {e}");
            Err(EXIT_CONFIG)
        }
    }
}

fn execute(spec: &ExperimentSpec, threads: Option<usize>) -> Result<(), u8> {
    let run = || {
        harness::run(spec).map(|artifacts| {
            for f in &artifacts.files {
                println!("{}", f.display());
            }
        })
    };
    let result = match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| {
                    eprintln!("runtime error: {e}");
                    EXIT_RUNTIME
                })?;
            pool.install(run)
        }
        None => run(),
    };
    result.map_err(|e| {
        eprintln!("runtime error: {e}");
        EXIT_RUNTIME
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.cmd {
        Cmd::Version => {
            println!("ddpilot {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Cmd::Validate { config } => load_spec(&cli, Some(config)).map(|spec| {
            println!("ok: {} scenario, {} trials", spec.scenario.name(), spec.trials);
        }),
        Cmd::Run { config } => {
            let config = config.clone();
            load_spec(&cli, Some(&config)).and_then(|spec| execute(&spec, cli.threads))
        }
        Cmd::Demo3 => load_spec(&cli, None).and_then(|spec| execute(&spec, cli.threads)),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(c) => ExitCode::from(c),
    }
}
