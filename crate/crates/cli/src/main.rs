use std::path::PathBuf;
use std::process::ExitCode;

use augrkhs_cli::{run, CliError, Command, ExperimentConfig};
use clap::Parser;

/// Augmentation-kernel experiments: complexity, spectra, pretraining, regression.
#[derive(Debug, Parser)]
#[command(name = "augrkhs", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enumeration budget, overriding the config.
    #[arg(long)]
    budget: Option<u64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.command = Some(args.command);
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(b) = args.budget {
        config.budget = b;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match resolve(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if args.print_config {
        println!("{}", config.to_json());
        return ExitCode::SUCCESS;
    }
    match run(&config, args.jobs) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            if report.failed_cells > 0 {
                eprintln!("{} of {} cells failed", report.failed_cells, report.cells);
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
