use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use timeless::experiments::{parse_config, check_config, run_experiment, EXPERIMENTS, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "timeless", version, about = "Clock-conditioned quantum dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// List experiment names.
    List,
}

const CONFIG_ERROR: u8 = 2;

fn load(path: &PathBuf) -> Result<timeless::experiments::ExperimentConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("<file>: cannot read {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })?;
    let cfg = parse_config(&text).map_err(|d| {
        eprintln!("{d}");
        ExitCode::from(CONFIG_ERROR)
    })?;
    let diagnostics = check_config(&cfg);
    if !diagnostics.is_empty() {
        for d in diagnostics {
            eprintln!("{d}");
        }
        return Err(ExitCode::from(CONFIG_ERROR));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config } => {
            let cfg = match load(&config) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            let manifest = match run_experiment(&cfg) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            for c in &manifest.checks {
                println!("{} {} (value {:e}, threshold {:e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            if let Some(e) = &manifest.error {
                eprintln!("error: {e}");
            }
            let dir = cfg.resolved_output_dir();
            println!("{:?}: manifest in {} (set {OUTPUT_ROOT_ENV} to relocate)", manifest.status, dir.display());
            ExitCode::from(manifest.status.exit_code() as u8)
        }
    }
}
