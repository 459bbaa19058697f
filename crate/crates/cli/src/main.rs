use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maxmod_cli::config::{SampleMethod, SampleSpec};
use maxmod_cli::{cmd_bench, cmd_fit, cmd_predict, cmd_sample, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "maxmod", version, about = "Shape-constrained Gaussian process fits with sequential knot and variable selection")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the run log and tables.
    Fit,
    /// Evaluate a fitted model at the points of a CSV file.
    Predict {
        /// Directory holding the artifacts of `fit` (defaults to --out).
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV with header x1,...,xD.
        #[arg(long)]
        points: PathBuf,
    },
    /// Draw from the constrained posterior of a fitted model.
    Sample {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Compare a preset fit with equispaced layouts.
    Bench,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Method {
    Auto,
    Rejection,
    Gibbs,
}

const DEFAULT_OUT: &str = "maxmod-out";

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let Some(path) = &cli.config else {
        return Err(CliError::Config("--config is required for this command".into()));
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Optional configuration for commands that work from artifacts.
fn load_optional(cli: &Cli) -> Result<Option<RunConfig>, CliError> {
    cli.config.as_ref().map(|_| load(cli)).transpose()
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit => {
            let cfg = load(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let fit = cmd_fit(&cfg, &out)?;
            let f = &fit.log.final_state;
            println!(
                "{:?}: active variables {:?}, {} knots, written to {}",
                f.stop_reason,
                f.active_variables,
                f.coefficients.len(),
                out.display()
            );
        }
        Command::Predict { model, points } => {
            let cfg = load_optional(cli)?;
            let out = out_dir(cli, cfg.as_ref());
            let model = model.clone().unwrap_or_else(|| out.clone());
            let pred = cmd_predict(&model, points, &out)?;
            println!("{} predictions written to {}", pred.len(), out.join("predictions.csv").display());
        }
        Command::Sample {
            model,
            count,
            level,
            method,
        } => {
            let cfg = load_optional(cli)?;
            let out = out_dir(cli, cfg.as_ref());
            let model = model.clone().unwrap_or_else(|| out.clone());
            let mut spec = cfg.as_ref().map(|c| c.sample.clone()).unwrap_or_else(SampleSpec::default);
            if let Some(c) = count {
                spec.count = *c;
            }
            if let Some(l) = level {
                spec.level = *l;
            }
            if let Some(m) = method {
                spec.method = match m {
                    Method::Auto => SampleMethod::Auto,
                    Method::Rejection => SampleMethod::Rejection,
                    Method::Gibbs => SampleMethod::Gibbs,
                };
            }
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let s = cmd_sample(&model, &spec, seed, &out)?;
            println!("{} draws written to {}", s.draws.len(), out.display());
        }
        Command::Bench => {
            let cfg = load(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let rows = cmd_bench(&cfg, &out)?;
            println!("{} rows written to {}", rows.len(), out.join("bench.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
