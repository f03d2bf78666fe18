use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use anosov_lab::lab::{acceptance, report, run, ExperimentConfig, ReportFormat};
use anosov_lab::markov::cat_map_partition;
use anosov_lab::torus::{verify_hyperbolicity, HyperbolicToralMap};
use anosov_lab::Error;

#[derive(Parser)]
#[command(
    name = "anosov-lab",
    version,
    about = "Pseudo-basin, Lyapunov and entropy experiments on hyperbolic toral maps"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "ANOSOV_LAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its record.
    Run { config: PathBuf },
    /// Turn records into CSV, merged JSON or plot data.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Run the cone check on the map of a config.
    VerifyMap {
        config: PathBuf,
        #[arg(long, default_value_t = 256)]
        grid: usize,
    },
    /// Run the registered acceptance criteria.
    Acceptance {
        /// Run only these criteria.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Write the cat-map partition as JSON polygons.
    ExportPartition {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(command: Command) -> anosov_lab::Result<u8> {
    match command {
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            let (record, files) = run(&config)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            if let Some(v) = record.verdict {
                println!("verdict: {v}");
            }
            for c in &record.checks {
                println!(
                    "{} {}: {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            for e in &record.stage_errors {
                eprintln!("stage {} failed: {}", e.stage, e.message);
            }
            Ok(record.exit_code() as u8)
        }
        Command::Report {
            records,
            format,
            out,
        } => {
            let output = report(&records, format, &out)?;
            for w in &output.warnings {
                eprintln!("warning: {w}");
            }
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::VerifyMap { config, grid } => {
            let config = ExperimentConfig::load(&config)?;
            let map = HyperbolicToralMap::try_from(config.map.clone()).map_err(|e| {
                Error::ConfigInvalid(vec![anosov_lab::error::FieldError::new(
                    "map",
                    e.to_string(),
                )])
            })?;
            match verify_hyperbolicity(&map, grid) {
                Ok(report) => {
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    Ok(if report.pass { 0 } else { 2 })
                }
                Err(e @ Error::NotHyperbolic { .. }) => {
                    println!("{e}");
                    Ok(2)
                }
                Err(e) => Err(e),
            }
        }
        Command::Acceptance { only } => {
            let mut failed = false;
            for c in acceptance::criteria() {
                if !only.is_empty() && !only.contains(&c.id) {
                    continue;
                }
                let outcome = acceptance::run_criterion(c.id);
                println!("{}", outcome.line());
                failed |= !outcome.pass;
            }
            Ok(if failed { 2 } else { 0 })
        }
        Command::ExportPartition { out } => {
            let json = cat_map_partition()?.to_json()?;
            match out {
                Some(path) => {
                    std::fs::write(&path, json)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
