use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ultranet_cli::checks::{run_checks, CheckConfig};
use ultranet_cli::config::{LevelRange, RunConfig};
use ultranet_cli::report::RunReport;
use ultranet_cli::solve::run_solve;
use ultranet_cli::sweep::{run_sweep, SweepConfig};
use ultranet_cli::{with_threads, CliError};

#[derive(Parser)]
#[command(name = "ultranet", version, about = "Galerkin-net studies on nested dyadic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if its parent exists)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Level range `A..B`, overriding the config
    #[arg(long)]
    levels: Option<LevelRange>,
    /// Random seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Format of the summary printed to stdout
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem over a level range
    Solve(Common),
    /// Run `solve` over a grid of config patches
    Sweep(Common),
    /// Exact-identity, convergence, density and perimeter suites
    CalculusCheck(Common),
}

fn read(path: &Option<PathBuf>) -> Result<Option<String>, CliError> {
    path.as_ref()
        .map(|p| {
            std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))
        })
        .transpose()
}

fn out_dir(c: &Common) -> Result<&Path, CliError> {
    c.out.as_deref().ok_or_else(|| CliError::Config("--out DIR is required".into()))
}

fn run(cmd: &Command) -> Result<RunReport, CliError> {
    match cmd {
        Command::Solve(c) => {
            let text = read(&c.config)?.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
            let mut config = RunConfig::from_json(&text)?;
            if let Some(l) = c.levels {
                config.levels = Some(l);
            }
            if let Some(s) = c.seed {
                config.seed = s;
            }
            let out = out_dir(c)?;
            with_threads(c.threads, || run_solve(&config, out).map(|s| s.report))?
        }
        Command::Sweep(c) => {
            let text = read(&c.config)?.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
            let config = SweepConfig::from_json(&text)?;
            let mut overrides = serde_json::Map::new();
            if let Some(l) = c.levels {
                overrides.insert("levels".into(), serde_json::to_value(format!("{}..{}", l.first, l.last)).unwrap());
            }
            if let Some(s) = c.seed {
                overrides.insert("seed".into(), s.into());
            }
            let out = out_dir(c)?;
            let ov = serde_json::Value::Object(overrides);
            with_threads(c.threads, || run_sweep(&config, &ov, out))?
        }
        Command::CalculusCheck(c) => {
            let mut config = match read(&c.config)? {
                Some(text) => CheckConfig::from_json(&text)?,
                None => CheckConfig::default(),
            };
            if let Some(l) = c.levels {
                config.identity_levels = l;
            }
            if let Some(s) = c.seed {
                config.seed = s;
            }
            let out = out_dir(c)?;
            with_threads(c.threads, || run_checks(&config, out))?
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Solve(c) | Command::Sweep(c) | Command::CalculusCheck(c) => c,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let format = common(&cli.command).format;
    match run(&cli.command) {
        Ok(report) => {
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
                Format::Csv => print!("{}", report.invariant_table().to_csv_string().expect("utf-8")),
            }
            ExitCode::from(report.exit_status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_status().code() as u8)
        }
    }
}
