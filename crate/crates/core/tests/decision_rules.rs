use redsim::analysis::{analyze, Policy, SystemSpec};
use redsim::distributions::{ConcavityClass, ServiceDistribution};
use redsim::experiments::decision::{OptionFigures, ALL_R, CANCEL, KEEP, ONE_R};
use redsim::experiments::{decision_report, Cancellation, Load};
use redsim::simulator::{self, BatchEstimate, SimConfig, Warmup};

fn latency(spec: SystemSpec, seed: u64) -> BatchEstimate {
    let cfg = SimConfig::new(spec, 120_000, seed).with_warmup(Warmup::Jobs(20_000));
    simulator::run(&cfg).unwrap().summary.latency
}

fn clearly_below(a: BatchEstimate, b: BatchEstimate) -> bool {
    a.mean + a.half_width < b.mean - b.half_width
}

fn check_report(dist: ServiceDistribution, n: u32, seed: u64) {
    for load in [Load::Low, Load::High] {
        let rep = decision_report(&dist, n, load).unwrap();
        let [cancel_lambda, r_lambda] = rep.regime_lambdas();
        let sim = |o: &OptionFigures, lambda: f64| latency(o.system(n, lambda, &dist), seed);

        let (win, lose) = match rep.cancellation {
            Cancellation::KeepRedundancy => (KEEP, CANCEL),
            Cancellation::CancelEarly => (CANCEL, KEEP),
        };
        let a = sim(rep.option(win).unwrap(), cancel_lambda);
        let b = sim(rep.option(lose).unwrap(), cancel_lambda);
        assert!(clearly_below(a, b), "{dist} n={n} {load}: {win} {a:?} vs {lose} {b:?}");

        let (win, lose) = if rep.replicas == n { (ALL_R, ONE_R) } else { (ONE_R, ALL_R) };
        let a = sim(rep.option(win).unwrap(), r_lambda);
        let b = sim(rep.option(lose).unwrap(), r_lambda);
        assert!(clearly_below(a, b), "{dist} n={n} {load}: {win} {a:?} vs {lose} {b:?}");
    }
}

#[test]
fn log_concave_recommendations_hold_in_simulation() {
    let d = ServiceDistribution::shifted_exp(1.0, 0.5).unwrap();
    assert_eq!(d.classify(), ConcavityClass::LogConcave);
    check_report(d, 6, 41);
}

#[test]
fn log_convex_recommendations_hold_in_simulation() {
    let d = ServiceDistribution::hyper_exp(0.4, 0.5, 2.0).unwrap();
    assert_eq!(d.classify(), ConcavityClass::LogConvex);
    check_report(d, 4, 42);
}

fn uniform_vs_group(dist: ServiceDistribution, seed: u64) -> (BatchEstimate, BatchEstimate) {
    let group = SystemSpec::new(6, 2, 0.1, Policy::PartialGroupRandom, dist.clone()).unwrap();
    let lambda = 0.9 * analyze(&group).unwrap().capacity.unwrap();
    let uniform = SystemSpec::new(6, 2, lambda, Policy::PartialUniformRandom, dist).unwrap();
    (latency(uniform, seed), latency(SystemSpec { lambda, ..group }, seed))
}

#[test]
fn uniform_beats_group_for_log_concave() {
    for (i, d) in [(1.0, 0.5), (2.0, 0.5)].into_iter().enumerate() {
        let dist = ServiceDistribution::shifted_exp(d.0, d.1).unwrap();
        let (u, g) = uniform_vs_group(dist.clone(), 50 + i as u64);
        assert!(clearly_below(u, g), "{dist}: uniform {u:?} group {g:?}");
    }
}

#[test]
fn group_beats_uniform_for_log_convex() {
    let dist = ServiceDistribution::hyper_exp(0.2, 0.2, 2.0).unwrap();
    let (u, g) = uniform_vs_group(dist.clone(), 60);
    assert!(clearly_below(g, u), "{dist}: uniform {u:?} group {g:?}");
}
