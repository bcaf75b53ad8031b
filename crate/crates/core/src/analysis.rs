//! Closed-form latency, cost and capacity of the replication policies.
//!
//! Latency numbers are labelled [`LatencyKind::Exact`] (Pollaczek-Khinchine
//! for systems that reduce to an M/G/1 queue), [`LatencyKind::Approximation`]
//! (the M/G/n approximation used for early cancellation) or
//! [`LatencyKind::BoundsOnly`] when only cost bounds are known.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{ConcavityClass, DistError, ServiceDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Replicate to all `n` servers, first completion cancels the rest.
    ForkJoin,
    /// Replicate to all `n` servers, first service start cancels the rest.
    ForkEarlyCancel,
    /// Replicate to one of `n / r` fixed groups of `r` servers, chosen uniformly.
    PartialGroupRandom,
    /// Replicate to `r` servers chosen uniformly without replacement.
    PartialUniformRandom,
    /// Replicate to `r` consecutive servers (mod `n`), advancing by `r` per job.
    PartialRoundRobin,
    /// Replicate to all `n` servers; once `r` copies have started, drop the rest.
    PartialCancellation,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::ForkJoin,
        Policy::ForkEarlyCancel,
        Policy::PartialGroupRandom,
        Policy::PartialUniformRandom,
        Policy::PartialRoundRobin,
        Policy::PartialCancellation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::ForkJoin => "fork_join",
            Policy::ForkEarlyCancel => "fork_early_cancel",
            Policy::PartialGroupRandom => "partial_group_random",
            Policy::PartialUniformRandom => "partial_uniform_random",
            Policy::PartialRoundRobin => "partial_round_robin",
            Policy::PartialCancellation => "partial_cancellation",
        }
    }

    pub fn is_partial(self) -> bool {
        !matches!(self, Policy::ForkJoin | Policy::ForkEarlyCancel)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("invalid system: {0}")]
    Config(String),
    #[error("unstable: load {utilization:.4} >= 1 (lambda = {lambda}, capacity = {capacity})")]
    Unstable {
        lambda: f64,
        capacity: f64,
        utilization: f64,
    },
    #[error("no cost bound is known for a {0} service distribution")]
    NoBound(ConcavityClass),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// A system of `n` identical FCFS servers under one replication policy.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub n: u32,
    pub r: u32,
    pub lambda: f64,
    pub policy: Policy,
    pub dist: ServiceDistribution,
}

impl SystemSpec {
    pub fn new(
        n: u32,
        r: u32,
        lambda: f64,
        policy: Policy,
        dist: ServiceDistribution,
    ) -> Result<Self, AnalysisError> {
        let spec = Self {
            n,
            r,
            lambda,
            policy,
            dist,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |msg: String| Err(AnalysisError::Config(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.r == 0 || self.r > self.n {
            return bad(format!("r = {} must satisfy 1 <= r <= n = {}", self.r, self.n));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda = {} must be finite and >= 0", self.lambda));
        }
        match self.policy {
            Policy::ForkJoin | Policy::ForkEarlyCancel if self.r != self.n => {
                return bad(format!(
                    "{} requires r = n (got r = {}, n = {})",
                    self.policy, self.r, self.n
                ));
            }
            Policy::PartialGroupRandom if self.n % self.r != 0 => {
                return bad(format!(
                    "{} requires r to divide n (got r = {}, n = {})",
                    self.policy, self.r, self.n
                ));
            }
            _ => {}
        }
        self.dist.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyKind {
    Exact,
    Approximation,
    BoundsOnly,
}

impl LatencyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LatencyKind::Exact => "exact",
            LatencyKind::Approximation => "approximation",
            LatencyKind::BoundsOnly => "bounds_only",
        }
    }
}

impl std::str::FromStr for LatencyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            LatencyKind::Exact,
            LatencyKind::Approximation,
            LatencyKind::BoundsOnly,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown latency kind `{s}`"))
    }
}

/// Closed interval `[lo, hi]` of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn ordered(a: f64, b: f64) -> Self {
        Self {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostEstimate {
    Exact { value: f64 },
    Bounds(Interval),
    Unavailable,
}

impl CostEstimate {
    pub fn interval(&self) -> Option<Interval> {
        match *self {
            CostEstimate::Exact { value } => Some(Interval::point(value)),
            CostEstimate::Bounds(i) => Some(i),
            CostEstimate::Unavailable => None,
        }
    }

    pub fn exact(&self) -> Option<f64> {
        match *self {
            CostEstimate::Exact { value } => Some(value),
            _ => None,
        }
    }
}

/// Analytic `E[T]`, `E[C]`, capacity and utilization of one system.
///
/// `None` latency means unavailable: either the system is unstable or no
/// closed form exists for the policy. `capacity` and `utilization` are `None`
/// only when `E[C]` is not known exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticMetrics {
    pub expected_latency: Option<f64>,
    pub latency_kind: LatencyKind,
    pub expected_cost: CostEstimate,
    pub capacity: Option<f64>,
    pub utilization: Option<f64>,
}

impl AnalyticMetrics {
    pub fn is_stable(&self) -> Option<bool> {
        self.utilization.map(|u| u < 1.0)
    }
}

/// Service capacity `n / E[C]` of a symmetric policy.
pub fn capacity(spec: &SystemSpec, expected_cost: f64) -> f64 {
    f64::from(spec.n) / expected_cost
}

fn require(spec: &SystemSpec, policy: Policy) -> Result<(), AnalysisError> {
    spec.validate()?;
    if spec.policy != policy {
        return Err(AnalysisError::Config(format!(
            "expected a {policy} system, got {}",
            spec.policy
        )));
    }
    Ok(())
}

/// Pollaczek-Khinchine mean response time of an M/G/1 queue, `None` when
/// `lambda * E[S] >= 1`.
fn pollaczek_khinchine(lambda: f64, s1: f64, s2: f64) -> Option<f64> {
    let rho = lambda * s1;
    (rho < 1.0).then(|| s1 + lambda * s2 / (2.0 * (1.0 - rho)))
}

/// `(n,1)` fork-join: an M/G/1 queue with service time `X_{1:n}`.
pub fn fork_join_metrics(spec: &SystemSpec) -> Result<AnalyticMetrics, AnalysisError> {
    require(spec, Policy::ForkJoin)?;
    let s1 = spec.dist.min_moment(spec.n, 1)?;
    let s2 = spec.dist.min_moment(spec.n, 2)?;
    let cost = f64::from(spec.n) * s1;
    Ok(AnalyticMetrics {
        expected_latency: pollaczek_khinchine(spec.lambda, s1, s2),
        latency_kind: LatencyKind::Exact,
        expected_cost: CostEstimate::Exact { value: cost },
        capacity: Some(capacity(spec, cost)),
        utilization: Some(spec.lambda * s1),
    })
}

/// Mean waiting time in queue of an M/M/n system (Erlang-C).
///
/// The queueing probability comes from the Erlang-B recursion
/// `B(k) = a B(k-1) / (k + a B(k-1))`, which stays finite for any `n`.
pub fn erlang_c_wait(n: u32, lambda: f64, mean_service: f64) -> Result<f64, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::Config("n must be at least 1".into()));
    }
    if !(mean_service.is_finite() && mean_service > 0.0) || !(lambda.is_finite() && lambda >= 0.0)
    {
        return Err(AnalysisError::Config(format!(
            "need lambda >= 0 and mean_service > 0 (got {lambda}, {mean_service})"
        )));
    }
    let nf = f64::from(n);
    let a = lambda * mean_service;
    let rho = a / nf;
    if rho >= 1.0 {
        return Err(AnalysisError::Unstable {
            lambda,
            capacity: nf / mean_service,
            utilization: rho,
        });
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let mut blocking = 1.0;
    for k in 1..=n {
        blocking = a * blocking / (f64::from(k) + a * blocking);
    }
    let p_queue = blocking / (1.0 - rho * (1.0 - blocking));
    Ok(p_queue / (nf / mean_service - lambda))
}

/// `(n,1)` fork-early-cancel: exactly an M/G/n queue. Cost is exact; latency
/// uses the two-moment M/G/n approximation built on Erlang-C.
pub fn early_cancel_metrics(spec: &SystemSpec) -> Result<AnalyticMetrics, AnalysisError> {
    require(spec, Policy::ForkEarlyCancel)?;
    let m1 = spec.dist.mean()?;
    let m2 = spec.dist.second_moment()?;
    let cap = capacity(spec, m1);
    let latency = match erlang_c_wait(spec.n, spec.lambda, m1) {
        Ok(wait) => Some(m1 + m2 / (2.0 * m1 * m1) * wait),
        Err(AnalysisError::Unstable { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(AnalyticMetrics {
        expected_latency: latency,
        latency_kind: LatencyKind::Approximation,
        expected_cost: CostEstimate::Exact { value: m1 },
        capacity: Some(cap),
        utilization: Some(spec.lambda / cap),
    })
}

/// Group-based random partial forking: `n / r` independent `(r,1)` fork-join
/// systems, each fed at rate `lambda r / n`.
pub fn group_fork_metrics(spec: &SystemSpec) -> Result<AnalyticMetrics, AnalysisError> {
    require(spec, Policy::PartialGroupRandom)?;
    let (n, r) = (f64::from(spec.n), f64::from(spec.r));
    let s1 = spec.dist.min_moment(spec.r, 1)?;
    let s2 = spec.dist.min_moment(spec.r, 2)?;
    let cost = r * s1;
    let load = spec.lambda * r * s1;
    let latency = (load < n).then(|| s1 + spec.lambda * r * s2 / (2.0 * (n - load)));
    Ok(AnalyticMetrics {
        expected_latency: latency,
        latency_kind: LatencyKind::Exact,
        expected_cost: CostEstimate::Exact { value: cost },
        capacity: Some(capacity(spec, cost)),
        utilization: Some(load / n),
    })
}

/// Bounds on `E[C]` for partial forking to `r` servers under any symmetric
/// policy, valid for every pattern of relative task start times.
pub fn cost_bounds(spec: &SystemSpec) -> Result<Interval, AnalysisError> {
    spec.validate()?;
    let mean = spec.dist.mean()?;
    if spec.r == 1 {
        return Ok(Interval::point(mean));
    }
    let simultaneous = f64::from(spec.r) * spec.dist.min_moment(spec.r, 1)?;
    if spec.r == spec.n {
        return Ok(Interval::point(simultaneous));
    }
    match spec.dist.classify() {
        ConcavityClass::LogConcave | ConcavityClass::LogConvex => {
            Ok(Interval::ordered(mean, simultaneous))
        }
        ConcavityClass::Both => Ok(Interval::point(simultaneous)),
        c @ ConcavityClass::Neither => Err(AnalysisError::NoBound(c)),
    }
}

/// Dispatches to the calculator for `spec.policy`. Policies without a latency
/// closed form report [`LatencyKind::BoundsOnly`] with the cost bounds.
pub fn analyze(spec: &SystemSpec) -> Result<AnalyticMetrics, AnalysisError> {
    spec.validate()?;
    match spec.policy {
        Policy::ForkJoin => fork_join_metrics(spec),
        Policy::ForkEarlyCancel => early_cancel_metrics(spec),
        Policy::PartialGroupRandom => group_fork_metrics(spec),
        Policy::PartialUniformRandom | Policy::PartialRoundRobin | Policy::PartialCancellation => {
            // With r = n every policy here degenerates to fork-join, and with
            // r = 1 partial cancellation is early cancellation.
            if spec.r == spec.n {
                let fj = SystemSpec {
                    policy: Policy::ForkJoin,
                    ..spec.clone()
                };
                return fork_join_metrics(&fj);
            }
            if spec.r == 1 && spec.policy == Policy::PartialCancellation {
                let ec = SystemSpec {
                    policy: Policy::ForkEarlyCancel,
                    r: spec.n,
                    ..spec.clone()
                };
                return early_cancel_metrics(&ec);
            }
            let cost = match cost_bounds(spec) {
                Ok(b) if b.is_point() => CostEstimate::Exact { value: b.lo },
                Ok(b) => CostEstimate::Bounds(b),
                Err(AnalysisError::NoBound(_)) => CostEstimate::Unavailable,
                Err(e) => return Err(e),
            };
            let cap = cost.exact().map(|c| capacity(spec, c));
            Ok(AnalyticMetrics {
                expected_latency: None,
                latency_kind: LatencyKind::BoundsOnly,
                expected_cost: cost,
                capacity: cap,
                utilization: cap.map(|c| spec.lambda / c),
            })
        }
    }
}

/// Monte-Carlo estimates for one job whose tasks start at fixed offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostDecomposition {
    pub mean_span: f64,
    pub span_std_err: f64,
    pub mean_cost: f64,
    pub cost_std_err: f64,
    pub samples: usize,
}

fn check_offsets(offsets: &[f64]) -> Result<(), AnalysisError> {
    match offsets.first() {
        Some(&t) if t == 0.0 => {}
        _ => {
            return Err(AnalysisError::Config(
                "relative start times must begin with t1 = 0".into(),
            ))
        }
    }
    if offsets.iter().any(|t| t.is_nan()) || offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(AnalysisError::Config(
            "relative start times must be non-decreasing".into(),
        ));
    }
    Ok(())
}

/// `Pr(S > s) = prod_i Pr(X > s - t_i)` where `S = min_i (X_i + t_i)`.
/// Infinite offsets denote tasks that never start.
pub fn span_tail(offsets: &[f64], dist: &ServiceDistribution, s: f64) -> f64 {
    offsets
        .iter()
        .filter(|t| t.is_finite())
        .map(|&t| dist.tail(s - t))
        .product()
}

/// Samples `S = min_i (X_i + t_i)` and `C = S + sum_{i>=2} (S - t_i)^+` for a
/// job whose tasks start at relative times `offsets` (first entry 0).
pub fn cost_decomposition<R: Rng + ?Sized>(
    offsets: &[f64],
    dist: &ServiceDistribution,
    samples: usize,
    rng: &mut R,
) -> Result<CostDecomposition, AnalysisError> {
    check_offsets(offsets)?;
    if samples == 0 {
        return Err(AnalysisError::Config("samples must be at least 1".into()));
    }
    let started: Vec<f64> = offsets.iter().copied().filter(|t| t.is_finite()).collect();
    let (mut s_sum, mut s_sq, mut c_sum, mut c_sq) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let span = started
            .iter()
            .map(|&t| t + dist.sample(rng))
            .fold(f64::INFINITY, f64::min);
        let cost = started.iter().map(|&t| (span - t).max(0.0)).sum::<f64>();
        s_sum += span;
        s_sq += span * span;
        c_sum += cost;
        c_sq += cost * cost;
    }
    let m = samples as f64;
    let se = |sum: f64, sq: f64| {
        if samples < 2 {
            0.0
        } else {
            let mean = sum / m;
            ((sq / m - mean * mean).max(0.0) * m / (m - 1.0) / m).sqrt()
        }
    };
    Ok(CostDecomposition {
        mean_span: s_sum / m,
        span_std_err: se(s_sum, s_sq),
        mean_cost: c_sum / m,
        cost_std_err: se(c_sum, c_sq),
        samples,
    })
}
