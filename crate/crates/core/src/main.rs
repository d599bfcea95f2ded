use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ris_zf::alloc::Algorithm;
use ris_zf::harness::{self, Axis, ConfigFile, Format, SweepSpec};
use ris_zf::Error;

#[derive(Parser)]
#[command(name = "ris-zf", version, about = "RIS-aided zero-forcing user allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Power,
    Elements,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write aggregated results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of direct,random,greedy,addone.
        #[arg(long, default_value = "direct,random,greedy,addone")]
        algorithms: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Fill the mean_ms column with measured wall time.
        #[arg(long)]
        timing: bool,
    },
    /// Run quick invariant checks on small instances.
    Check,
}

fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>, Error> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Check => {
            let checks = harness::self_check();
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Run {
            config,
            sweep,
            trials,
            seed,
            algorithms,
            out,
            format,
            workers,
            timing,
        } => {
            let run = || -> Result<harness::SweepResult, Error> {
                let cfg = ConfigFile::load(&config).map_err(|e| match e {
                    Error::Io(io) => Error::Config(format!("{}: {io}", config.display())),
                    other => other,
                })?;
                let axis = match sweep {
                    SweepArg::Power => Axis::Power,
                    SweepArg::Elements => Axis::Elements,
                };
                let mut spec = SweepSpec::from_config(&cfg, axis, trials, seed, parse_algorithms(&algorithms)?);
                spec.timing = timing;
                if workers == Some(0) {
                    return Err(Error::Config("--workers must be at least 1".into()));
                }
                let result = harness::run_sweep(&spec, workers)?;
                let format = match format {
                    FormatArg::Csv => Format::Csv,
                    FormatArg::Json => Format::Json,
                };
                harness::emit(&result, format, &out)?;
                Ok(result)
            };
            match run() {
                Ok(result) if result.failures == 0 => ExitCode::SUCCESS,
                Ok(result) => {
                    for msg in &result.failure_messages {
                        eprintln!("trial failure: {msg}");
                    }
                    eprintln!("{} failed algorithm runs", result.failures);
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
    }
}
