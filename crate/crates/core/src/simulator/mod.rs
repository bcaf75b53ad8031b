//! Seeded discrete-event simulation of `n` FCFS servers under each
//! replication policy.
//!
//! Jobs arrive as a Poisson process. Each job is copied to a set of servers
//! chosen by the policy; the first copy to finish completes the job and all
//! remaining copies are removed at the same instant. A copy removed from a
//! queue costs nothing, a copy removed mid-service costs the time it already
//! spent in service.

pub mod stats;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisError, Policy, SystemSpec};
pub use stats::{BatchEstimate, StabilityReport, StabilityVerdict};

pub type JobId = u32;
pub type TaskId = u32;

pub const DEFAULT_BATCHES: usize = 20;
const MIN_DEFAULT_WARMUP: usize = 10_000;
pub const MIN_PROBE_HORIZON: usize = 10_000;

const ARRIVAL_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;
const ROUTING_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    System(#[from] AnalysisError),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// Number of leading jobs excluded from the summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Warmup {
    Jobs(u64),
    Fraction(f64),
}

impl Warmup {
    /// Resolves to a job count. Without an explicit setting this is
    /// `max(10^4, jobs / 10)`, capped at half the run.
    pub fn resolve(setting: Option<Warmup>, jobs: usize) -> Result<usize, SimError> {
        match setting {
            None => Ok(MIN_DEFAULT_WARMUP.max(jobs / 10).min(jobs / 2)),
            Some(Warmup::Jobs(k)) => {
                let k = k as usize;
                if k >= jobs {
                    Err(SimError::Config(format!("warmup {k} must be below jobs {jobs}")))
                } else {
                    Ok(k)
                }
            }
            Some(Warmup::Fraction(f)) => {
                if (0.0..1.0).contains(&f) {
                    Ok((jobs as f64 * f) as usize)
                } else {
                    Err(SimError::Config(format!("warmup fraction {f} must lie in [0, 1)")))
                }
            }
        }
    }
}

/// One simulation point: a system plus run length and seed.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub system: SystemSpec,
    pub jobs: usize,
    pub seed: u64,
    pub warmup: Option<Warmup>,
    pub batches: usize,
}

impl SimConfig {
    pub fn new(system: SystemSpec, jobs: usize, seed: u64) -> Self {
        Self {
            system,
            jobs,
            seed,
            warmup: None,
            batches: DEFAULT_BATCHES,
        }
    }

    pub fn with_warmup(mut self, warmup: Warmup) -> Self {
        self.warmup = Some(warmup);
        self
    }

    fn validate(&self) -> Result<usize, SimError> {
        self.system.validate()?;
        if self.jobs == 0 {
            return Err(SimError::Config("jobs must be at least 1".into()));
        }
        if self.jobs > u32::MAX as usize / self.system.n as usize {
            return Err(SimError::Config(format!("jobs = {} is too large", self.jobs)));
        }
        if self.batches < 2 {
            return Err(SimError::Config("need at least 2 batches".into()));
        }
        Warmup::resolve(self.warmup, self.jobs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    JobArrival(JobId),
    ServiceCompletion { server: u32, task: TaskId },
}

/// Calendar entry, ordered by `(time, seq)`.
#[derive(Debug, Clone, Copy)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    // Reversed so that `BinaryHeap` pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Queued,
    InService,
    Finished,
    Canceled,
}

#[derive(Debug, Clone, Copy)]
struct Task {
    job: JobId,
    server: u32,
    start: Option<f64>,
    state: TaskState,
}

#[derive(Debug, Clone)]
struct JobState {
    arrival: f64,
    first_task: TaskId,
    task_count: u32,
    started: u32,
    cost: f64,
    completion: Option<f64>,
}

impl JobState {
    fn task_ids(&self) -> std::ops::Range<TaskId> {
        self.first_task..self.first_task + self.task_count
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerState {
    queue: VecDeque<TaskId>,
    in_service: Option<TaskId>,
}

impl ServerState {
    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn queue(&self) -> &VecDeque<TaskId> {
        &self.queue
    }

    pub fn in_service(&self) -> Option<TaskId> {
        self.in_service
    }
}

/// Per-job outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub arrival: f64,
    /// Absolute service start of each replica, `None` if it never started.
    pub start_times: Vec<Option<f64>>,
    /// Servers the replicas were sent to, parallel to `start_times`.
    pub servers: Vec<u32>,
    pub completion: f64,
    pub latency: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub latency: BatchEstimate,
    pub cost: BatchEstimate,
    pub jobs_counted: usize,
    pub warmup_discarded: usize,
    pub stability: StabilityReport,
}

impl MetricsSummary {
    pub fn is_stable(&self) -> bool {
        self.stability.verdict == StabilityVerdict::Stable
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub summary: MetricsSummary,
    pub records: Vec<JobRecord>,
    /// Number of replicas that entered service at each server.
    pub server_starts: Vec<u64>,
    pub events_processed: u64,
}

/// Complete engine state. [`run`] drives it to completion; the methods are
/// exposed for step-level inspection.
pub struct SimState {
    spec: SystemSpec,
    now: f64,
    seq: u64,
    calendar: BinaryHeap<SimEvent>,
    servers: Vec<ServerState>,
    tasks: Vec<Task>,
    jobs: Vec<JobState>,
    total_jobs: usize,
    in_system: usize,
    rr_offset: u32,
    arrivals: ChaCha8Rng,
    service: ChaCha8Rng,
    routing: ChaCha8Rng,
    queue_samples: Vec<(f64, usize)>,
    server_starts: Vec<u64>,
    events_processed: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl SimState {
    pub fn new(spec: SystemSpec, total_jobs: usize, seed: u64) -> Result<Self, SimError> {
        spec.validate()?;
        let n = spec.n as usize;
        let mut state = Self {
            now: 0.0,
            seq: 0,
            calendar: BinaryHeap::new(),
            servers: vec![ServerState::default(); n],
            tasks: Vec::with_capacity(total_jobs * spec.r.max(1) as usize),
            jobs: Vec::with_capacity(total_jobs),
            total_jobs,
            in_system: 0,
            rr_offset: 0,
            arrivals: stream(seed, ARRIVAL_STREAM),
            service: stream(seed, SERVICE_STREAM),
            routing: stream(seed, ROUTING_STREAM),
            queue_samples: Vec::with_capacity(total_jobs),
            server_starts: vec![0; n],
            events_processed: 0,
            spec,
        };
        if total_jobs > 0 {
            let first = state.next_interarrival();
            state.schedule(first, EventKind::JobArrival(0));
        }
        Ok(state)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn jobs_in_system(&self) -> usize {
        self.in_system
    }

    pub fn task_state(&self, task: TaskId) -> TaskState {
        self.tasks[task as usize].state
    }

    /// Replicas of `job` still queued or in service.
    pub fn live_tasks(&self, job: JobId) -> Vec<TaskId> {
        self.jobs[job as usize]
            .task_ids()
            .filter(|&t| {
                matches!(
                    self.tasks[t as usize].state,
                    TaskState::Queued | TaskState::InService
                )
            })
            .collect()
    }

    pub fn job_cost(&self, job: JobId) -> f64 {
        self.jobs[job as usize].cost
    }

    fn next_interarrival(&mut self) -> f64 {
        // lambda = 0 is simulated as the zero-load limit: the next job arrives
        // the moment the system empties.
        if self.spec.lambda == 0.0 {
            self.now
        } else {
            self.now + self.arrivals.sample::<f64, _>(Exp1) / self.spec.lambda
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.calendar.push(SimEvent {
            time,
            seq: self.seq,
            kind,
        });
    }

    /// Processes the next event. Returns `false` once the calendar is empty.
    pub fn step(&mut self) -> bool {
        let Some(event) = self.calendar.pop() else {
            return false;
        };
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        self.events_processed += 1;
        match event.kind {
            EventKind::JobArrival(job) => self.handle_arrival(job),
            EventKind::ServiceCompletion { server, task } => self.handle_completion(server, task),
        }
        true
    }

    fn pick_servers(&mut self) -> Vec<u32> {
        let (n, r) = (self.spec.n, self.spec.r);
        match self.spec.policy {
            Policy::ForkJoin | Policy::ForkEarlyCancel | Policy::PartialCancellation => {
                (0..n).collect()
            }
            Policy::PartialGroupRandom => {
                let group = self.routing.random_range(0..n / r);
                (group * r..(group + 1) * r).collect()
            }
            Policy::PartialUniformRandom => {
                let mut picked: Vec<u32> =
                    rand::seq::index::sample(&mut self.routing, n as usize, r as usize)
                        .into_iter()
                        .map(|i| i as u32)
                        .collect();
                picked.sort_unstable();
                picked
            }
            Policy::PartialRoundRobin => {
                let start = self.rr_offset;
                self.rr_offset = (self.rr_offset + r) % n;
                (0..r).map(|i| (start + i) % n).collect()
            }
        }
    }

    fn ties_matter(&self) -> bool {
        matches!(
            self.spec.policy,
            Policy::ForkEarlyCancel | Policy::PartialCancellation
        )
    }

    fn handle_arrival(&mut self, job: JobId) {
        debug_assert_eq!(job as usize, self.jobs.len());
        self.queue_samples.push((self.now, self.in_system));
        let servers = self.pick_servers();
        let first_task = self.tasks.len() as TaskId;
        self.jobs.push(JobState {
            arrival: self.now,
            first_task,
            task_count: servers.len() as u32,
            started: 0,
            cost: 0.0,
            completion: None,
        });
        self.in_system += 1;
        let mut idle = Vec::new();
        for (i, &s) in servers.iter().enumerate() {
            self.tasks.push(Task {
                job,
                server: s,
                start: None,
                state: TaskState::Queued,
            });
            let server = &mut self.servers[s as usize];
            if !server.is_busy() && server.queue.is_empty() {
                idle.push(s);
            }
            server.queue.push_back(first_task + i as TaskId);
        }
        self.refill(idle);

        let next = job as usize + 1;
        if next < self.total_jobs && self.spec.lambda > 0.0 {
            let t = self.next_interarrival();
            self.schedule(t, EventKind::JobArrival(next as JobId));
        }
    }

    /// Starts queue heads at the given free servers. Simultaneous starts are
    /// taken in uniformly random order where the policy cancels on start.
    fn refill(&mut self, mut free: Vec<u32>) {
        if free.len() > 1 && self.ties_matter() {
            free.shuffle(&mut self.routing);
        }
        for s in free {
            self.start_next(s);
        }
    }

    fn start_next(&mut self, server: u32) {
        let slot = &mut self.servers[server as usize];
        if slot.is_busy() {
            return;
        }
        let Some(task) = slot.queue.pop_front() else {
            return;
        };
        slot.in_service = Some(task);
        let job = {
            let t = &mut self.tasks[task as usize];
            debug_assert_eq!(t.state, TaskState::Queued);
            t.state = TaskState::InService;
            t.start = Some(self.now);
            t.job
        };
        self.server_starts[server as usize] += 1;
        let service = self.spec.dist.sample(&mut self.service);
        self.schedule(
            self.now + service,
            EventKind::ServiceCompletion { server, task },
        );
        let started = {
            let j = &mut self.jobs[job as usize];
            j.started += 1;
            j.started
        };
        let cancel_queued = match self.spec.policy {
            Policy::ForkEarlyCancel => true,
            Policy::PartialCancellation => started >= self.spec.r,
            _ => false,
        };
        if cancel_queued {
            self.cancel_queued(job);
        }
    }

    fn cancel_queued(&mut self, job: JobId) {
        for t in self.jobs[job as usize].task_ids() {
            if self.tasks[t as usize].state == TaskState::Queued {
                self.remove_from_queue(t);
            }
        }
    }

    fn remove_from_queue(&mut self, task: TaskId) {
        let t = &mut self.tasks[task as usize];
        t.state = TaskState::Canceled;
        let queue = &mut self.servers[t.server as usize].queue;
        let pos = queue
            .iter()
            .position(|&q| q == task)
            .expect("queued task is present in its server queue");
        queue.remove(pos);
    }

    /// Removes every live replica of `job` except `keep`, charging in-service
    /// replicas for their elapsed service. Returns the servers this freed.
    fn strip_job(&mut self, job: JobId, keep: Option<TaskId>) -> Vec<u32> {
        let mut freed = Vec::new();
        for t in self.jobs[job as usize].task_ids() {
            if Some(t) == keep {
                continue;
            }
            match self.tasks[t as usize].state {
                TaskState::Queued => self.remove_from_queue(t),
                TaskState::InService => {
                    let task = &mut self.tasks[t as usize];
                    task.state = TaskState::Canceled;
                    let elapsed = self.now - task.start.expect("started task has a start time");
                    let server = task.server;
                    self.jobs[job as usize].cost += elapsed;
                    self.servers[server as usize].in_service = None;
                    freed.push(server);
                }
                TaskState::Finished | TaskState::Canceled => {}
            }
        }
        freed
    }

    /// Cancels every live replica of `job` except `keep`. Servers whose
    /// replica was in service immediately start their next queued replica.
    pub fn cancel_job_tasks(&mut self, job: JobId, keep: Option<TaskId>) {
        let freed = self.strip_job(job, keep);
        self.refill(freed);
    }

    fn handle_completion(&mut self, server: u32, task: TaskId) {
        if self.servers[server as usize].in_service != Some(task) {
            // The replica was canceled after this completion was scheduled.
            return;
        }
        let job = {
            let t = &mut self.tasks[task as usize];
            t.state = TaskState::Finished;
            let elapsed = self.now - t.start.expect("in-service task has a start time");
            let job = t.job;
            self.jobs[job as usize].cost += elapsed;
            job
        };
        self.servers[server as usize].in_service = None;
        self.jobs[job as usize].completion = Some(self.now);
        self.in_system -= 1;

        let mut freed = vec![server];
        freed.extend(self.strip_job(job, Some(task)));
        self.refill(freed);

        if self.spec.lambda == 0.0 && self.in_system == 0 {
            let next = self.jobs.len();
            if next < self.total_jobs {
                self.schedule(self.now, EventKind::JobArrival(next as JobId));
            }
        }
    }

    fn records(&self) -> Vec<JobRecord> {
        self.jobs
            .iter()
            .enumerate()
            .map(|(id, j)| {
                let completion = j.completion.expect("every job completes");
                let tasks = &self.tasks[j.first_task as usize..(j.first_task + j.task_count) as usize];
                JobRecord {
                    job_id: id as JobId,
                    arrival: j.arrival,
                    start_times: tasks.iter().map(|t| t.start).collect(),
                    servers: tasks.iter().map(|t| t.server).collect(),
                    completion,
                    latency: completion - j.arrival,
                    cost: j.cost,
                }
            })
            .collect()
    }
}

/// Simulates `config.jobs` jobs to completion and summarizes the jobs after
/// warm-up. Identical configs produce identical output.
pub fn run(config: &SimConfig) -> Result<SimOutput, SimError> {
    let warmup = config.validate()?;
    let mut state = SimState::new(config.system.clone(), config.jobs, config.seed)?;
    while state.step() {}
    debug_assert_eq!(state.jobs.len(), config.jobs);

    let records = state.records();
    let counted = &records[warmup..];
    let latencies: Vec<f64> = counted.iter().map(|r| r.latency).collect();
    let costs: Vec<f64> = counted.iter().map(|r| r.cost).collect();
    let summary = MetricsSummary {
        latency: stats::batch_means(&latencies, config.batches),
        cost: stats::batch_means(&costs, config.batches),
        jobs_counted: counted.len(),
        warmup_discarded: warmup,
        stability: stats::queue_trend(&state.queue_samples),
    };
    Ok(SimOutput {
        summary,
        records,
        server_starts: state.server_starts,
        events_processed: state.events_processed,
    })
}

/// Runs `horizon` jobs and fits a trend to the number of jobs in system.
pub fn stability_probe(config: &SimConfig, horizon: usize) -> Result<StabilityReport, SimError> {
    if horizon < MIN_PROBE_HORIZON {
        return Err(SimError::Config(format!(
            "stability horizon {horizon} is below {MIN_PROBE_HORIZON} jobs"
        )));
    }
    let probe = SimConfig {
        jobs: horizon,
        warmup: Some(Warmup::Jobs(0)),
        ..config.clone()
    };
    Ok(run(&probe)?.summary.stability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze, fork_join_metrics};
    use crate::distributions::ServiceDistribution;

    fn shifted(delta: f64, mu: f64) -> ServiceDistribution {
        ServiceDistribution::shifted_exp(delta, mu).unwrap()
    }

    fn exp(mu: f64) -> ServiceDistribution {
        ServiceDistribution::exponential(mu).unwrap()
    }

    fn hyper(p: f64, mu1: f64, mu2: f64) -> ServiceDistribution {
        ServiceDistribution::hyper_exp(p, mu1, mu2).unwrap()
    }

    fn sys(n: u32, r: u32, lambda: f64, policy: Policy, d: ServiceDistribution) -> SystemSpec {
        SystemSpec::new(n, r, lambda, policy, d).unwrap()
    }

    fn run_sys(spec: SystemSpec, jobs: usize, seed: u64) -> SimOutput {
        run(&SimConfig::new(spec, jobs, seed)).unwrap()
    }

    fn within(est: &BatchEstimate, target: f64, sigmas: f64) -> bool {
        (est.mean - target).abs() <= sigmas * est.std_err
    }

    #[test]
    fn event_order_is_time_then_seq() {
        let mut heap = BinaryHeap::new();
        for (time, seq) in [(2.0, 1), (1.0, 3), (1.0, 2), (0.5, 4)] {
            heap.push(SimEvent {
                time,
                seq,
                kind: EventKind::JobArrival(0),
            });
        }
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop()).map(|e| e.seq).collect();
        assert_eq!(order, vec![4, 2, 3, 1]);
    }

    #[test]
    fn mm1_latency() {
        let (mu, lambda) = (1.0, 0.5);
        let out = run_sys(sys(1, 1, lambda, Policy::ForkJoin, exp(mu)), 200_000, 1);
        assert!(within(&out.summary.latency, 1.0 / (mu - lambda), 3.5), "{:?}", out.summary.latency);
    }

    #[test]
    fn group_fork_matches_closed_form() {
        let spec = sys(6, 2, 0.5, Policy::PartialGroupRandom, shifted(1.0, 0.5));
        let out = run_sys(spec, 200_000, 2);
        assert!(within(&out.summary.latency, 2.625, 3.5), "{:?}", out.summary.latency);
        assert!(within(&out.summary.cost, 4.0, 3.5), "{:?}", out.summary.cost);
    }

    #[test]
    fn fork_join_tasks_start_together() {
        let spec = sys(4, 4, 0.3, Policy::ForkJoin, shifted(1.0, 0.5));
        let out = run_sys(spec, 20_000, 3);
        for rec in &out.records {
            let starts: Vec<f64> = rec.start_times.iter().flatten().copied().collect();
            assert_eq!(starts.len(), 4, "fork-join replicas all start");
            assert!(starts.iter().all(|&s| s == starts[0]));
            assert!((rec.cost - 4.0 * (rec.completion - starts[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn early_cancel_serves_exactly_one_replica() {
        let spec = sys(4, 4, 0.6, Policy::ForkEarlyCancel, shifted(2.0, 0.5));
        let out = run_sys(spec, 20_000, 4);
        for rec in &out.records {
            assert_eq!(rec.start_times.iter().flatten().count(), 1);
            let start = rec.start_times.iter().flatten().next().unwrap();
            assert!((rec.cost - (rec.completion - start)).abs() < 1e-9);
        }
    }

    #[test]
    fn partial_cancellation_limits_started_replicas() {
        for r in 1..=4 {
            let spec = sys(4, r, 0.4, Policy::PartialCancellation, shifted(1.0, 0.5));
            let out = run_sys(spec, 10_000, 5);
            for rec in &out.records {
                let started = rec.start_times.iter().flatten().count() as u32;
                assert!(started >= 1 && started <= r);
            }
        }
    }

    #[test]
    fn partial_cancellation_extremes_match_fork_variants() {
        let d = shifted(1.0, 0.5);
        let pc = run_sys(sys(4, 4, 0.3, Policy::PartialCancellation, d.clone()), 30_000, 6);
        let fj = run_sys(sys(4, 4, 0.3, Policy::ForkJoin, d.clone()), 30_000, 6);
        assert_eq!(pc.summary.latency.mean, fj.summary.latency.mean);
        assert_eq!(pc.summary.cost.mean, fj.summary.cost.mean);
        let pc = run_sys(sys(4, 1, 0.6, Policy::PartialCancellation, d.clone()), 100_000, 7);
        assert!(within(&pc.summary.cost, d.mean().unwrap(), 3.5));
    }

    #[test]
    fn completed_jobs_and_cost_accounting() {
        for policy in Policy::ALL {
            let (n, r) = match policy {
                Policy::ForkJoin | Policy::ForkEarlyCancel => (4, 4),
                _ => (6, 2),
            };
            let spec = sys(n, r, 0.5, policy, hyper(0.1, 1.5, 0.5));
            let out = run_sys(spec, 5_000, 8);
            assert_eq!(out.records.len(), 5_000);
            for (i, rec) in out.records.iter().enumerate() {
                assert_eq!(rec.job_id as usize, i);
                assert!(rec.latency > 0.0, "{policy}");
                assert!(rec.cost > 0.0, "{policy}");
                let earliest = rec.start_times.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
                assert!(earliest >= rec.arrival);
                // No replica is charged beyond the completion instant.
                let bound: f64 = rec
                    .start_times
                    .iter()
                    .flatten()
                    .map(|s| rec.completion - s)
                    .sum();
                assert!(rec.cost <= bound + 1e-9, "{policy}");
            }
        }
    }

    #[test]
    fn cancel_job_tasks_semantics() {
        // Two servers, three jobs forked to both: job 0 starts at both,
        // jobs 1 and 2 wait in both queues.
        let spec = sys(2, 2, 1.0, Policy::ForkJoin, shifted(1.0, 0.5));
        let mut state = SimState::new(spec, 3, 9).unwrap();
        while state.jobs.len() < 3 {
            let next = state.calendar.peek().unwrap().kind;
            if matches!(next, EventKind::ServiceCompletion { .. }) {
                // Keep the completion out of the way for this test.
                let ev = state.calendar.pop().unwrap();
                state.calendar.push(SimEvent { time: 1e9, ..ev });
            }
            state.step();
        }
        let now = state.now();
        let job1 = state.live_tasks(1);
        assert_eq!(job1.len(), 2);
        assert!(job1.iter().all(|&t| state.task_state(t) == TaskState::Queued));

        // Queued replicas vanish at zero cost.
        state.cancel_job_tasks(1, Some(job1[0]));
        assert_eq!(state.live_tasks(1), vec![job1[0]]);
        assert_eq!(state.job_cost(1), 0.0);
        assert!(!state.servers()[1].queue().contains(&job1[1]));

        // keep = only live task is a no-op.
        state.cancel_job_tasks(1, Some(job1[0]));
        assert_eq!(state.live_tasks(1), vec![job1[0]]);

        // Canceling job 0 mid-service charges elapsed time and refills both
        // servers in the same instant.
        let job0 = state.live_tasks(0);
        let started = state.tasks[job0[0] as usize].start.unwrap();
        state.cancel_job_tasks(0, None);
        assert!(state.live_tasks(0).is_empty());
        assert!((state.job_cost(0) - 2.0 * (now - started)).abs() < 1e-12);
        let s0 = state.servers()[0].in_service().unwrap();
        let s1 = state.servers()[1].in_service().unwrap();
        assert_eq!(state.tasks[s0 as usize].job, 1);
        assert_eq!(state.tasks[s1 as usize].job, 2);
        assert_eq!(state.tasks[s0 as usize].start, Some(now));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        for policy in Policy::ALL {
            let (n, r) = match policy {
                Policy::ForkJoin | Policy::ForkEarlyCancel => (3, 3),
                _ => (6, 3),
            };
            let a = run_sys(sys(n, r, 0.4, policy, shifted(1.0, 0.5)), 3_000, 10);
            let b = run_sys(sys(n, r, 0.4, policy, shifted(1.0, 0.5)), 3_000, 10);
            assert_eq!(a.records, b.records);
            let c = run_sys(sys(n, r, 0.4, policy, shifted(1.0, 0.5)), 3_000, 11);
            assert_ne!(a.records, c.records);
        }
    }

    #[test]
    fn symmetric_policies_balance_load() {
        for policy in [
            Policy::PartialGroupRandom,
            Policy::PartialUniformRandom,
            Policy::PartialRoundRobin,
            Policy::ForkEarlyCancel,
        ] {
            let (n, r) = if policy == Policy::ForkEarlyCancel { (6, 6) } else { (6, 2) };
            let out = run_sys(sys(n, r, 0.8, policy, shifted(1.0, 0.5)), 60_000, 12);
            let total: u64 = out.server_starts.iter().sum();
            let mean = total as f64 / f64::from(n);
            let p = 1.0 / f64::from(n);
            let sigma = (total as f64 * p * (1.0 - p)).sqrt();
            for &c in &out.server_starts {
                assert!((c as f64 - mean).abs() < 3.0 * sigma, "{policy}: {:?}", out.server_starts);
            }
        }
    }

    #[test]
    fn zero_load_latency_is_service_time() {
        let d = shifted(1.0, 0.5);
        let out = run_sys(sys(3, 3, 0.0, Policy::ForkJoin, d.clone()), 40_000, 13);
        let target = d.min_moment(3, 1).unwrap();
        assert!(within(&out.summary.latency, target, 3.5));
        for w in out.records.windows(2) {
            assert!(w[1].arrival >= w[0].completion);
        }
        assert!(out.summary.is_stable());
    }

    #[test]
    fn warmup_resolution() {
        assert_eq!(Warmup::resolve(None, 200_000).unwrap(), 20_000);
        assert_eq!(Warmup::resolve(None, 50_000).unwrap(), 10_000);
        assert_eq!(Warmup::resolve(None, 1_000).unwrap(), 500);
        assert_eq!(Warmup::resolve(Some(Warmup::Fraction(0.25)), 1000).unwrap(), 250);
        assert!(Warmup::resolve(Some(Warmup::Jobs(10)), 10).is_err());
        assert!(Warmup::resolve(Some(Warmup::Fraction(1.0)), 10).is_err());
    }

    #[test]
    fn summary_counts_jobs_after_warmup() {
        let cfg = SimConfig::new(sys(2, 2, 0.3, Policy::ForkJoin, exp(1.0)), 5_000, 14)
            .with_warmup(Warmup::Jobs(1_000));
        let out = run(&cfg).unwrap();
        assert_eq!(out.summary.jobs_counted, 4_000);
        assert_eq!(out.summary.warmup_discarded, 1_000);
        assert!(out.summary.latency.half_width >= 0.0);
    }

    #[test]
    fn invalid_configs_rejected_before_running() {
        let spec = SystemSpec {
            n: 4,
            r: 3,
            lambda: 0.1,
            policy: Policy::ForkJoin,
            dist: exp(1.0),
        };
        assert!(matches!(
            run(&SimConfig::new(spec, 100, 1)),
            Err(SimError::System(_))
        ));
        let ok = sys(2, 2, 0.1, Policy::ForkJoin, exp(1.0));
        assert!(matches!(run(&SimConfig::new(ok.clone(), 0, 1)), Err(SimError::Config(_))));
        assert!(stability_probe(&SimConfig::new(ok, 100, 1), 100).is_err());
    }

    #[test]
    fn stability_probe_around_capacity() {
        let d = shifted(1.0, 0.5);
        let cap = fork_join_metrics(&sys(4, 4, 0.1, Policy::ForkJoin, d.clone()))
            .unwrap()
            .capacity
            .unwrap();
        let probe = |lambda: f64| {
            let cfg = SimConfig::new(sys(4, 4, lambda, Policy::ForkJoin, d.clone()), 1, 15);
            stability_probe(&cfg, 50_000).unwrap().verdict
        };
        assert_eq!(probe(0.9 * cap), StabilityVerdict::Stable);
        assert_eq!(probe(1.1 * cap), StabilityVerdict::Unstable);
        assert_eq!(probe(0.0), StabilityVerdict::Stable);
    }

    #[test]
    fn simulated_cost_matches_exact_policies() {
        for d in [shifted(1.0, 0.5), hyper(0.1, 1.5, 0.5)] {
            for spec in [
                sys(4, 4, 0.3, Policy::ForkJoin, d.clone()),
                sys(4, 4, 0.3, Policy::ForkEarlyCancel, d.clone()),
                sys(6, 3, 0.3, Policy::PartialGroupRandom, d.clone()),
            ] {
                let target = analyze(&spec).unwrap().expected_cost.exact().unwrap();
                let out = run_sys(spec.clone(), 100_000, 16);
                assert!(
                    within(&out.summary.cost, target, 3.5),
                    "{} {d}: {:?} vs {target}",
                    spec.policy,
                    out.summary.cost
                );
            }
        }
    }
}
