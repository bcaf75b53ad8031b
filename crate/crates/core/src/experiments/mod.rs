//! Scenario sweeps that pair simulation with the closed forms, figure presets
//! and redundancy recommendations.

pub mod config;
pub mod decision;
pub mod table;

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{analyze, AnalysisError, CostEstimate, LatencyKind, Policy, SystemSpec};
use crate::simulator::{self, stats, SimConfig, SimError, Warmup, DEFAULT_BATCHES};
pub use config::{load_config, parse_config, ConfigFormat, LambdaSpec, RawScenario, Scenario};
pub use decision::{
    conjecture_probe, decision_report, regime_lambda, Cancellation, ConjectureReport,
    DecisionReport, Load, ProbeSettings,
};
pub use table::{csv_string, emit_csv, fmt_sig6, parse_csv, ComparisonRow, CSV_HEADER};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{}", located("parse error", *line, message))]
    Parse { line: Option<usize>, message: String },
    #[error("{}", located(&format!("scenario `{scenario}`"), *line, message))]
    Validation {
        scenario: String,
        line: Option<usize>,
        message: String,
    },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("no rule applies: {0} is neither log-concave nor log-convex")]
    NoRule(String),
}

fn located(what: &str, line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("{what} (line {l}): {message}"),
        None => format!("{what}: {message}"),
    }
}

impl ExperimentError {
    /// Process exit code: 1 for invalid input, 2 for runtime failures, 3 for
    /// I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Parse { .. }
            | ExperimentError::Validation { .. }
            | ExperimentError::NoRule(_)
            | ExperimentError::Sim(SimError::Config(_))
            | ExperimentError::Sim(SimError::System(AnalysisError::Config(_)))
            | ExperimentError::Analysis(AnalysisError::Config(_)) => 1,
            ExperimentError::Io(_) => 3,
            _ => 2,
        }
    }
}

/// Runs every sweep point of `scenario` (in parallel) and returns one row per
/// point in sweep order. Replications are pooled into a single row.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<ComparisonRow>, ExperimentError> {
    scenario
        .systems()
        .par_iter()
        .map(|system| evaluate(scenario, system))
        .collect()
}

pub fn run_scenarios(scenarios: &[Scenario]) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let mut rows = Vec::new();
    for s in scenarios {
        rows.extend(run_scenario(s)?);
    }
    Ok(rows)
}

fn evaluate(scenario: &Scenario, system: &SystemSpec) -> Result<ComparisonRow, ExperimentError> {
    let analytic = analyze(system)?;
    let mut latencies = Vec::new();
    let mut costs = Vec::new();
    let mut stable = true;
    for k in 0..scenario.replications {
        let config = SimConfig {
            warmup: scenario.warmup,
            ..SimConfig::new(
                system.clone(),
                scenario.jobs,
                scenario.seed.wrapping_add(u64::from(k)),
            )
        };
        let out = simulator::run(&config)?;
        let warm = out.summary.warmup_discarded;
        latencies.extend(out.records[warm..].iter().map(|r| r.latency));
        costs.extend(out.records[warm..].iter().map(|r| r.cost));
        stable &= out.summary.is_stable();
    }
    // Equal-length replications keep every batch inside one replication.
    let batches = DEFAULT_BATCHES * scenario.replications as usize;
    let latency = stats::batch_means(&latencies, batches);
    let cost = stats::batch_means(&costs, batches);
    let (lo, hi) = match analytic.expected_cost {
        CostEstimate::Exact { value } => (Some(value), Some(value)),
        CostEstimate::Bounds(b) => (Some(b.lo), Some(b.hi)),
        CostEstimate::Unavailable => (None, None),
    };
    Ok(ComparisonRow {
        scenario: scenario.name.clone(),
        policy: system.policy,
        n: system.n,
        r: system.r,
        lambda: system.lambda,
        et_sim: latency.mean,
        et_ci: latency.half_width,
        ec_sim: cost.mean,
        ec_ci: cost.half_width,
        et_analytic: analytic.expected_latency,
        et_kind: analytic.latency_kind,
        ec_analytic_lo: lo,
        ec_analytic_hi: hi,
        capacity: Some(
            analytic
                .capacity
                .unwrap_or_else(|| simulator_capacity(system, cost.mean)),
        ),
        stable,
    })
}

fn simulator_capacity(system: &SystemSpec, mean_cost: f64) -> f64 {
    f64::from(system.n) / mean_cost
}

/// Closed-form metrics of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRow {
    pub scenario: String,
    pub policy: Policy,
    pub n: u32,
    pub r: u32,
    pub lambda: f64,
    pub et: Option<f64>,
    pub et_kind: LatencyKind,
    pub ec_lo: Option<f64>,
    pub ec_hi: Option<f64>,
    pub capacity: Option<f64>,
    pub utilization: Option<f64>,
}

pub const ANALYTIC_HEADER: [&str; 11] = [
    "scenario",
    "policy",
    "n",
    "r",
    "lambda",
    "ET_analytic",
    "ET_kind",
    "EC_analytic_lo",
    "EC_analytic_hi",
    "capacity",
    "utilization",
];

pub fn analyze_scenario(scenario: &Scenario) -> Result<Vec<AnalyticRow>, ExperimentError> {
    scenario
        .systems()
        .iter()
        .map(|system| {
            let m = analyze(system)?;
            let (ec_lo, ec_hi) = match m.expected_cost {
                CostEstimate::Exact { value } => (Some(value), Some(value)),
                CostEstimate::Bounds(b) => (Some(b.lo), Some(b.hi)),
                CostEstimate::Unavailable => (None, None),
            };
            Ok(AnalyticRow {
                scenario: scenario.name.clone(),
                policy: system.policy,
                n: system.n,
                r: system.r,
                lambda: system.lambda,
                et: m.expected_latency,
                et_kind: m.latency_kind,
                ec_lo,
                ec_hi,
                capacity: m.capacity,
                utilization: m.utilization,
            })
        })
        .collect()
}

pub fn emit_analytic_csv<W: Write>(rows: &[AnalyticRow], out: W) -> Result<(), ExperimentError> {
    let io = |e: csv::Error| ExperimentError::Io(e.to_string());
    let opt = |x: Option<f64>| x.map(fmt_sig6).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANALYTIC_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.policy.to_string(),
            r.n.to_string(),
            r.r.to_string(),
            fmt_sig6(r.lambda),
            opt(r.et),
            r.et_kind.as_str().to_string(),
            opt(r.ec_lo),
            opt(r.ec_hi),
            opt(r.capacity),
            opt(r.utilization),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| ExperimentError::Io(e.to_string()))
}

/// Figure presets shipped with the crate, as TOML text.
pub const PRESETS: [(&str, &str); 6] = [
    ("fig5", include_str!("../../presets/fig5.toml")),
    ("fig6", include_str!("../../presets/fig6.toml")),
    ("fig7", include_str!("../../presets/fig7.toml")),
    ("fig8", include_str!("../../presets/fig8.toml")),
    ("fig9", include_str!("../../presets/fig9.toml")),
    ("fig10", include_str!("../../presets/fig10.toml")),
];

pub fn preset(name: &str) -> Result<Vec<Scenario>, ExperimentError> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            ExperimentError::Validation {
                scenario: name.to_string(),
                line: None,
                message: format!("unknown preset (have {})", names.join(", ")),
            }
        })?;
    parse_config(text, ConfigFormat::Toml)
}

/// Overrides run length and seed of every scenario, keeping warm-up valid.
pub fn override_run(scenarios: &mut [Scenario], jobs: Option<usize>, seed: Option<u64>) {
    for s in scenarios {
        if let Some(jobs) = jobs {
            s.jobs = jobs;
            if let Some(Warmup::Jobs(w)) = s.warmup {
                if w as usize >= jobs {
                    s.warmup = None;
                }
            }
        }
        if let Some(seed) = seed {
            s.seed = seed;
        }
    }
}
