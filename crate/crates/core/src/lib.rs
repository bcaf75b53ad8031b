//! Queueing models of task replication on `n` FCFS servers: service-time
//! distributions, closed-form latency and cost, a discrete-event simulator
//! and experiment sweeps that compare the two.

pub mod analysis;
pub mod distributions;
pub mod experiments;
pub mod simulator;

pub use analysis::{analyze, AnalyticMetrics, CostEstimate, Interval, LatencyKind, Policy, SystemSpec};
pub use distributions::{ConcavityClass, ServiceDistribution};
pub use simulator::{run, SimConfig, SimOutput};
