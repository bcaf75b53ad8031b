//! Redundancy recommendations by tail shape and load, and the empirical check
//! that full forking is optimal for log-convex service times.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::analysis::{Policy, SystemSpec};
use crate::distributions::{ConcavityClass, ServiceDistribution};
use crate::simulator::{self, BatchEstimate, SimConfig, Warmup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Load {
    Low,
    High,
}

impl std::str::FromStr for Load {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Load::Low),
            "high" => Ok(Load::High),
            _ => Err(format!("load must be `low` or `high`, got `{s}`")),
        }
    }
}

impl fmt::Display for Load {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Load::Low => "low",
            Load::High => "high",
        })
    }
}

pub const HIGH_LOAD_FRACTION: f64 = 0.9;
pub const LOW_LOAD_FRACTION: f64 = 0.1;

/// Arrival rate standing in for a load regime when comparing options with
/// the given capacities: 0.9 of the largest capacity for `High`, 0.1 of the
/// smallest for `Low`.
pub fn regime_lambda(load: Load, capacities: &[f64]) -> f64 {
    match load {
        Load::High => HIGH_LOAD_FRACTION * capacities.iter().copied().fold(f64::MIN, f64::max),
        Load::Low => LOW_LOAD_FRACTION * capacities.iter().copied().fold(f64::MAX, f64::min),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cancellation {
    KeepRedundancy,
    CancelEarly,
}

impl fmt::Display for Cancellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Cancellation::KeepRedundancy => "keep redundancy",
            Cancellation::CancelEarly => "cancel early",
        })
    }
}

/// Closed-form cost and capacity of one candidate system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptionFigures {
    pub label: String,
    pub policy: Policy,
    pub r: u32,
    pub expected_cost: f64,
    pub capacity: f64,
}

impl OptionFigures {
    pub fn system(&self, n: u32, lambda: f64, dist: &ServiceDistribution) -> SystemSpec {
        SystemSpec {
            n,
            r: self.r,
            lambda,
            policy: self.policy,
            dist: dist.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionReport {
    pub class: ConcavityClass,
    pub n: u32,
    pub load: Load,
    /// Latency-optimal choice between fork-join and fork-early-cancel.
    pub cancellation: Cancellation,
    /// Latency-optimal number of replicas for partial forking.
    pub replicas: u32,
    pub cost_optimal_cancellation: Cancellation,
    pub cost_optimal_replicas: u32,
    /// Every option costs `E[X]` per job, so replication is free.
    pub cost_neutral: bool,
    /// Fork-join, fork-early-cancel, forking to `r = n` and to `r = 1`.
    pub options: Vec<OptionFigures>,
}

impl DecisionReport {
    pub fn option(&self, label: &str) -> Option<&OptionFigures> {
        self.options.iter().find(|o| o.label == label)
    }

    /// Arrival rate representing this report's load for the
    /// cancellation choice (`[0]`) and the replica choice (`[1]`).
    pub fn regime_lambdas(&self) -> [f64; 2] {
        let caps = |a: &str, b: &str| {
            [
                self.option(a).expect("option exists").capacity,
                self.option(b).expect("option exists").capacity,
            ]
        };
        [
            regime_lambda(self.load, &caps(KEEP, CANCEL)),
            regime_lambda(self.load, &caps(ALL_R, ONE_R)),
        ]
    }
}

pub const KEEP: &str = "keep redundancy";
pub const CANCEL: &str = "cancel early";
pub const ALL_R: &str = "r = n";
pub const ONE_R: &str = "r = 1";

impl fmt::Display for DecisionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "service time: {}", self.class)?;
        writeln!(f, "servers: {}, load: {}", self.n, self.load)?;
        writeln!(f, "latency-optimal: {}, r = {}", self.cancellation, self.replicas)?;
        writeln!(
            f,
            "cost-optimal: {}, r = {}",
            self.cost_optimal_cancellation, self.cost_optimal_replicas
        )?;
        if self.cost_neutral {
            writeln!(f, "note: every option has the same expected cost, replication is cost-neutral")?;
        }
        writeln!(f, "{:<16} {:<24} {:>3} {:>12} {:>12}", "option", "policy", "r", "E[C]", "capacity")?;
        for o in &self.options {
            writeln!(
                f,
                "{:<16} {:<24} {:>3} {:>12.6} {:>12.6}",
                o.label, o.policy, o.r, o.expected_cost, o.capacity
            )?;
        }
        Ok(())
    }
}

pub fn decision_report(
    dist: &ServiceDistribution,
    n: u32,
    load: Load,
) -> Result<DecisionReport, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::Runtime("n must be at least 1".into()));
    }
    dist.validate().map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let class = dist.classify();
    let nf = f64::from(n);
    let mean = dist.mean().map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let full = nf * dist
        .min_moment(n, 1)
        .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let figures = |label: &str, policy, r, cost: f64| OptionFigures {
        label: label.to_string(),
        policy,
        r,
        expected_cost: cost,
        capacity: nf / cost,
    };
    let options = vec![
        figures(KEEP, Policy::ForkJoin, n, full),
        figures(CANCEL, Policy::ForkEarlyCancel, n, mean),
        figures(ALL_R, Policy::PartialUniformRandom, n, full),
        figures(ONE_R, Policy::PartialUniformRandom, 1, mean),
    ];
    use Cancellation::*;
    let (cancellation, replicas, cost_cancel, cost_r, cost_neutral) = match class {
        ConcavityClass::LogConcave => match load {
            Load::Low => (KeepRedundancy, n, CancelEarly, 1, false),
            Load::High => (CancelEarly, 1, CancelEarly, 1, false),
        },
        ConcavityClass::LogConvex => (KeepRedundancy, n, KeepRedundancy, n, false),
        ConcavityClass::Both => (KeepRedundancy, n, KeepRedundancy, n, true),
        ConcavityClass::Neither => return Err(ExperimentError::NoRule(dist.to_string())),
    };
    Ok(DecisionReport {
        class,
        n,
        load,
        cancellation,
        replicas,
        cost_optimal_cancellation: cost_cancel,
        cost_optimal_replicas: cost_r,
        cost_neutral,
        options,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeEntry {
    pub r: u32,
    pub latency: BatchEstimate,
    pub cost: BatchEstimate,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjecturePoint {
    pub lambda: f64,
    pub entries: Vec<ProbeEntry>,
    /// `r = n` has the smallest estimated mean latency.
    pub latency_min_at_n: bool,
    pub cost_min_at_n: bool,
    /// Some `r < n` beats `r = n` with non-overlapping confidence intervals.
    pub latency_counterexample: Option<u32>,
    pub cost_counterexample: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjectureReport {
    pub dist: String,
    pub n: u32,
    pub points: Vec<ConjecturePoint>,
}

impl ConjectureReport {
    pub fn counterexamples(&self) -> usize {
        self.points
            .iter()
            .map(|p| {
                usize::from(p.latency_counterexample.is_some())
                    + usize::from(p.cost_counterexample.is_some())
            })
            .sum()
    }
}

impl fmt::Display for ConjectureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dist: {}, n = {}", self.dist, self.n)?;
        for p in &self.points {
            writeln!(f, "lambda = {}", p.lambda)?;
            for e in &p.entries {
                writeln!(
                    f,
                    "  r = {:>3}  E[T] = {:.5} +- {:.5}  E[C] = {:.5} +- {:.5}{}",
                    e.r,
                    e.latency.mean,
                    e.latency.half_width,
                    e.cost.mean,
                    e.cost.half_width,
                    if e.stable { "" } else { "  (unstable)" }
                )?;
            }
            let verdict = |min: bool, counter: Option<u32>| match (min, counter) {
                (_, Some(r)) => format!("counterexample at r = {r}"),
                (true, None) => "r = n is minimal".to_string(),
                (false, None) => "r = n within confidence of the minimum".to_string(),
            };
            writeln!(f, "  latency: {}", verdict(p.latency_min_at_n, p.latency_counterexample))?;
            writeln!(f, "  cost: {}", verdict(p.cost_min_at_n, p.cost_counterexample))?;
        }
        Ok(())
    }
}

/// Settings for the simulations behind [`conjecture_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub jobs: usize,
    pub seed: u64,
    pub warmup: Option<Warmup>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            jobs: 100_000,
            seed: 1,
            warmup: None,
        }
    }
}

/// Default arrival rates: fractions of `n / E[X]`, the smallest capacity any
/// `r` can have for a log-convex service time.
pub fn default_probe_lambdas(dist: &ServiceDistribution, n: u32) -> Result<Vec<f64>, ExperimentError> {
    let mean = dist.mean().map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let cap = f64::from(n) / mean;
    Ok([0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|f| f * cap).collect())
}

/// Simulates uniform-random forking to every `r = 1..=n` at each arrival rate
/// and checks whether `r = n` minimizes both mean latency and mean cost.
pub fn conjecture_probe(
    dist: &ServiceDistribution,
    n: u32,
    lambdas: &[f64],
    settings: ProbeSettings,
) -> Result<ConjectureReport, ExperimentError> {
    match dist.classify() {
        ConcavityClass::LogConvex | ConcavityClass::Both => {}
        c => {
            return Err(ExperimentError::Runtime(format!(
                "the probe needs a log-convex service time, {dist} is {c}"
            )))
        }
    }
    let jobs: Vec<(usize, u32)> = (0..lambdas.len())
        .flat_map(|i| (1..=n).map(move |r| (i, r)))
        .collect();
    let entries: Vec<ProbeEntry> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let system = SystemSpec::new(n, r, lambdas[i], Policy::PartialUniformRandom, dist.clone())?;
            let config = SimConfig {
                warmup: settings.warmup,
                ..SimConfig::new(system, settings.jobs, settings.seed)
            };
            let summary = simulator::run(&config)?.summary;
            Ok(ProbeEntry {
                r,
                latency: summary.latency,
                cost: summary.cost,
                stable: summary.is_stable(),
            })
        })
        .collect::<Result<_, ExperimentError>>()?;
    let points = lambdas
        .iter()
        .zip(entries.chunks(n as usize))
        .map(|(&lambda, chunk)| {
            let full = chunk.last().expect("n >= 1 entries");
            let judge = |get: fn(&ProbeEntry) -> BatchEstimate| {
                let best = chunk
                    .iter()
                    .all(|e| get(full).mean <= get(e).mean);
                let counter = chunk
                    .iter()
                    .filter(|e| e.r < n)
                    .find(|e| get(e).mean + get(e).half_width < get(full).mean - get(full).half_width)
                    .map(|e| e.r);
                (best, counter)
            };
            let (latency_min_at_n, latency_counterexample) = judge(|e| e.latency);
            let (cost_min_at_n, cost_counterexample) = judge(|e| e.cost);
            ConjecturePoint {
                lambda,
                entries: chunk.to_vec(),
                latency_min_at_n,
                cost_min_at_n,
                latency_counterexample,
                cost_counterexample,
            }
        })
        .collect();
    Ok(ConjectureReport {
        dist: dist.to_string(),
        n,
        points,
    })
}
