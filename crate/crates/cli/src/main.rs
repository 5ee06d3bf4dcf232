use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loopgap_cli::{run, validate_file, ExperimentKind, RunError};

#[derive(Parser)]
#[command(
    name = "loopgap",
    version,
    about = "Open-loop vs closed-loop stochastic control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `mc.master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Caps the worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the available experiments.
    ListExperiments,
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            threads,
            out,
        } => {
            let mut cfg = loopgap_cli::load_config(&config)?;
            if let Some(seed) = seed {
                cfg.mc.master_seed = seed;
            }
            if let Some(out) = out {
                cfg.output.dir = out;
            }
            if let Some(n) = threads {
                if n == 0 {
                    return Err(RunError::Validation(vec![loopgap_cli::Diagnostic {
                        field: "--threads".into(),
                        message: "must be at least 1".into(),
                    }]));
                }
                // Only fails if a pool already exists, which cannot happen here.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            let (_, written) = run(&cfg)?;
            print!(
                "{}",
                std::fs::read_to_string(&written.summary).unwrap_or_default()
            );
            println!("wrote {}", written.report.display());
            Ok(())
        }
        Command::Validate { config } => {
            validate_file(&config)?;
            println!("{}: ok", config.display());
            Ok(())
        }
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<22} {}", kind.name(), kind.description());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
