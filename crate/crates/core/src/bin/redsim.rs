use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use redsim::distributions::ServiceDistribution;
use redsim::experiments::{
    self, conjecture_probe, decision::default_probe_lambdas, decision_report, load_config, Load,
    ProbeSettings, Scenario,
};
use redsim::experiments::ExperimentError;

#[derive(Parser)]
#[command(name = "redsim", version, about = "Latency and cost of task replication on FCFS servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML, or JSON by extension)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in figure preset: fig5 .. fig10
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every sweep point and compare with the closed forms
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Write CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the seed of every scenario
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of jobs per run
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Closed-form metrics only
    Analyze {
        #[command(flatten)]
        source: Source,
    },
    /// Recommend a redundancy strategy
    Decide {
        /// Distribution literal, e.g. '{kind = "shiftedexp", delta = 1.0, mu = 0.5}'
        #[arg(long)]
        dist: String,
        #[arg(long)]
        n: u32,
        #[arg(long, value_parser = parse_load)]
        load: Load,
    },
    /// Check whether forking to all n servers is optimal for a log-convex service time
    ProbeConjecture {
        #[arg(long)]
        dist: String,
        #[arg(long)]
        n: u32,
        /// Arrival rates, comma separated (default: fractions of n / E[X])
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100_000)]
        jobs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_load(s: &str) -> Result<Load, String> {
    s.parse()
}

fn scenarios(source: &Source) -> Result<Vec<Scenario>, ExperimentError> {
    match (&source.config, &source.preset) {
        (Some(path), _) => load_config(path),
        (None, Some(name)) => experiments::preset(name),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn parse_dist(text: &str) -> Result<ServiceDistribution, ExperimentError> {
    ServiceDistribution::parse_literal(text).map_err(|message| ExperimentError::Parse {
        line: None,
        message: format!("--dist: {message}"),
    })
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, ExperimentError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| ExperimentError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Simulate {
            source,
            out,
            seed,
            jobs,
        } => {
            let mut scenarios = scenarios(&source)?;
            experiments::override_run(&mut scenarios, jobs, seed);
            // Open the output first so an unwritable path fails before any run.
            let sink = output(out.as_ref())?;
            let rows = experiments::run_scenarios(&scenarios)?;
            for row in rows.iter().filter(|r| !r.stable) {
                eprintln!(
                    "warning: {} n={} r={} lambda={} looks unstable",
                    row.scenario, row.n, row.r, row.lambda
                );
            }
            experiments::emit_csv(&rows, sink)
        }
        Command::Analyze { source } => {
            let mut rows = Vec::new();
            for s in scenarios(&source)? {
                rows.extend(experiments::analyze_scenario(&s)?);
            }
            experiments::emit_analytic_csv(&rows, io::stdout().lock())
        }
        Command::Decide { dist, n, load } => {
            let report = decision_report(&parse_dist(&dist)?, n, load)?;
            print!("{report}");
            Ok(())
        }
        Command::ProbeConjecture {
            dist,
            n,
            lambdas,
            jobs,
            seed,
        } => {
            let dist = parse_dist(&dist)?;
            let lambdas = match lambdas {
                Some(l) => l,
                None => default_probe_lambdas(&dist, n)?,
            };
            let settings = ProbeSettings {
                jobs,
                seed,
                ..ProbeSettings::default()
            };
            let report = conjecture_probe(&dist, n, &lambdas, settings)?;
            print!("{report}");
            if report.counterexamples() > 0 {
                eprintln!("counterexamples found: {}", report.counterexamples());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
