use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pacb::cli::{self, Command, OutputFormat, OutputOptions};
use pacb::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "pacb",
    about = "Generalization certificates for Bayesian linear regression \
             under iid and ARX data, with Monte Carlo verification harnesses"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for reports.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (also via PACB_THREADS; default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Restrict which report files are written.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Subcommand)]
enum Sub {
    /// Assemble a bound certificate for a dataset (loaded or generated).
    Certify,
    /// Monte Carlo coverage of a certificate over fresh datasets.
    Coverage,
    /// Exact chi-square bound vs the closed-form prior-variance bound.
    Compare,
    /// Certificate convergence over an n grid (or the cor6 asymptote sweep).
    Sweep,
    /// Minimal eigenvalues rho_n of the joint input covariance.
    Spectrum,
    /// Sample a dataset and write it as CSV.
    Simulate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn thread_count(cli_threads: Option<usize>) -> Option<usize> {
    cli_threads.or_else(|| {
        std::env::var("PACB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let Some(config_path) = args.config.as_ref() else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(cli::EXIT_CONFIG as u8);
    };
    let text = match std::fs::read_to_string(config_path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", config_path.display());
            return ExitCode::from(cli::EXIT_CONFIG as u8);
        }
    };
    let mut config = match RunConfig::from_json(&text) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(cli::EXIT_CONFIG as u8);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let opts = OutputOptions {
        out_dir: args.out.clone(),
        format: match args.format {
            None => OutputFormat::Both,
            Some(FormatArg::Json) => OutputFormat::Json,
            Some(FormatArg::Csv) => OutputFormat::Csv,
        },
    };
    let command = match args.command {
        Sub::Certify => Command::Certify,
        Sub::Coverage => Command::Coverage,
        Sub::Compare => Command::Compare,
        Sub::Sweep => Command::Sweep,
        Sub::Spectrum => Command::Spectrum,
        Sub::Simulate => Command::Simulate,
    };
    let code = match thread_count(args.threads) {
        Some(threads) if threads > 0 => {
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => pool.install(|| cli::run_command(command, &config, &opts)),
                Err(err) => {
                    eprintln!("error: cannot build thread pool: {err}");
                    cli::EXIT_CONFIG
                }
            }
        }
        _ => cli::run_command(command, &config, &opts),
    };
    ExitCode::from(code as u8)
}
