use proptest::prelude::*;

use redsim::analysis::{analyze, Policy, SystemSpec};
use redsim::distributions::ServiceDistribution;
use redsim::simulator::{self, SimConfig, Warmup};

fn any_dist() -> impl Strategy<Value = ServiceDistribution> {
    prop_oneof![
        (0.2f64..3.0).prop_map(|mu| ServiceDistribution::exponential(mu).unwrap()),
        (0.0f64..3.0, 0.2f64..3.0).prop_map(|(d, mu)| ServiceDistribution::shifted_exp(d, mu).unwrap()),
        (0.05f64..0.95, 0.2f64..3.0, 0.2f64..3.0)
            .prop_map(|(p, a, b)| ServiceDistribution::hyper_exp(p, a, b).unwrap()),
    ]
}

/// A valid system with arrival rate below half its capacity bound.
fn any_system() -> impl Strategy<Value = SystemSpec> {
    (any_dist(), 1u32..7, 0usize..Policy::ALL.len(), 0.05f64..0.5).prop_flat_map(|(d, n, p, frac)| {
        let policy = Policy::ALL[p];
        let r_range = match policy {
            Policy::ForkJoin | Policy::ForkEarlyCancel => n..=n,
            _ => 1..=n,
        };
        (Just(d), Just(n), Just(policy), Just(frac), r_range)
            .prop_filter("group policies need r | n", |(_, n, policy, _, r)| {
                *policy != Policy::PartialGroupRandom || n % r == 0
            })
            .prop_map(|(d, n, policy, frac, r)| {
                let probe = SystemSpec::new(n, r, 0.1, policy, d.clone()).unwrap();
                let metrics = analyze(&probe).unwrap();
                // Bounds-only policies: the upper cost bound gives a safe rate.
                let worst = metrics.expected_cost.interval().unwrap().hi;
                let lambda = frac * f64::from(n) / worst;
                SystemSpec { lambda, ..probe }
            })
    })
}

fn sim(spec: SystemSpec, seed: u64) -> simulator::SimOutput {
    simulator::run(&SimConfig::new(spec, 2_000, seed).with_warmup(Warmup::Jobs(200))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_job_completes_once(spec in any_system(), seed in any::<u64>()) {
        let out = sim(spec.clone(), seed);
        prop_assert_eq!(out.records.len(), 2_000);
        for (i, rec) in out.records.iter().enumerate() {
            prop_assert_eq!(rec.job_id as usize, i);
            prop_assert!(rec.completion >= rec.arrival);
            prop_assert!((rec.latency - (rec.completion - rec.arrival)).abs() <= 1e-9 * rec.completion.max(1.0));
            let sent = if spec.policy == Policy::PartialCancellation { spec.n } else { spec.r };
            prop_assert_eq!(rec.servers.len(), sent as usize);
            prop_assert!(rec.start_times.iter().flatten().count() <= spec.r as usize);
            prop_assert!(rec.cost >= 0.0);
            let started: Vec<f64> = rec.start_times.iter().flatten().copied().collect();
            prop_assert!(!started.is_empty());
            prop_assert!(started.iter().all(|&s| s >= rec.arrival && s <= rec.completion));
            let mut servers = rec.servers.clone();
            servers.sort_unstable();
            servers.dedup();
            prop_assert_eq!(servers.len(), rec.servers.len(), "replicas on distinct servers");
            prop_assert!(rec.servers.iter().all(|&s| s < spec.n));
        }
        let starts: u64 = out.server_starts.iter().sum();
        let recorded = out.records.iter().map(|r| r.start_times.iter().flatten().count() as u64).sum::<u64>();
        prop_assert_eq!(starts, recorded);
    }

    #[test]
    fn cost_is_busy_time_of_started_replicas(spec in any_system(), seed in any::<u64>()) {
        let out = sim(spec, seed);
        for rec in &out.records {
            // Every started replica runs until the job completes or it finishes itself.
            let upper: f64 = rec.start_times.iter().flatten().map(|s| rec.completion - s).sum();
            prop_assert!(rec.cost <= upper + 1e-9 * upper.max(1.0));
        }
    }

    #[test]
    fn same_seed_same_records(spec in any_system(), seed in any::<u64>()) {
        let a = sim(spec.clone(), seed);
        let b = sim(spec, seed);
        prop_assert_eq!(a.records, b.records);
        prop_assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn fork_join_replicas_start_together(d in any_dist(), n in 1u32..7, frac in 0.05f64..0.8, seed in any::<u64>()) {
        let probe = SystemSpec::new(n, n, 0.1, Policy::ForkJoin, d).unwrap();
        let cap = analyze(&probe).unwrap().capacity.unwrap();
        let out = sim(SystemSpec { lambda: frac * cap, ..probe }, seed);
        for rec in &out.records {
            let first = rec.start_times[0].unwrap();
            prop_assert!(rec.start_times.iter().all(|s| *s == Some(first)));
            let service = rec.completion - first;
            prop_assert!((rec.cost - f64::from(n) * service).abs() <= 1e-9 * rec.cost.max(1.0));
        }
    }

    #[test]
    fn early_cancel_starts_one_replica(d in any_dist(), n in 1u32..7, frac in 0.05f64..0.8, seed in any::<u64>()) {
        let probe = SystemSpec::new(n, n, 0.1, Policy::ForkEarlyCancel, d).unwrap();
        let cap = analyze(&probe).unwrap().capacity.unwrap();
        let out = sim(SystemSpec { lambda: frac * cap, ..probe }, seed);
        for rec in &out.records {
            let started: Vec<f64> = rec.start_times.iter().flatten().copied().collect();
            prop_assert_eq!(started.len(), 1);
            prop_assert!((rec.cost - (rec.completion - started[0])).abs() <= 1e-9 * rec.cost.max(1.0));
        }
    }

    #[test]
    fn group_random_stays_in_one_group(d in any_dist(), groups in 1u32..4, r in 1u32..4, seed in any::<u64>()) {
        let n = groups * r;
        let probe = SystemSpec::new(n, r, 0.1, Policy::PartialGroupRandom, d).unwrap();
        let cap = analyze(&probe).unwrap().capacity.unwrap();
        let out = sim(SystemSpec { lambda: 0.5 * cap, ..probe }, seed);
        for rec in &out.records {
            let g = rec.servers[0] / r;
            prop_assert!(rec.servers.iter().all(|s| s / r == g));
        }
    }
}
