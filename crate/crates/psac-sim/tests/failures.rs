//! Node crashes mid-run must not break atomicity, per-entity ordering,
//! or conservation of money, under either engine.

use psac_sim::checker::{check_atomicity, check_conservation, check_linearizability};
use psac_sim::scenario::{CrashSpec, Engine, Scenario, Workload};
use psac_sim::sim::run_scenario;
use psac_sim::trace::TraceKind;

fn crashy(engine: Engine, seed: u64) -> Scenario {
    let mut sc = Scenario::quick("crash", engine, Workload::SyncHot { hot_accounts: 6 }, seed);
    sc.users = 12;
    sc.accounts = 50;
    sc.warmup_us = 200_000;
    sc.measure_us = 1_500_000;
    sc.crashes = vec![CrashSpec { node: 1, at_us: 700_000, recover_at_us: Some(1_200_000) }];
    sc
}

#[test]
fn crash_and_failover_preserve_run_invariants() {
    for engine in [Engine::Psac { max_parallel: 8 }, Engine::TwoPl] {
        let sc = crashy(engine, 1234);
        let label = sc.engine.label();
        let result = run_scenario(&sc).expect("run");
        let crashed = result
            .trace
            .events
            .iter()
            .any(|e| matches!(e.kind, TraceKind::NodeCrashed { node: 1 }));
        let recovered = result
            .trace
            .events
            .iter()
            .any(|e| matches!(e.kind, TraceKind::NodeRecovered { node: 1 }));
        assert!(crashed && recovered, "{label}: crash schedule did not execute");
        assert!(
            result.metrics.successes > 0,
            "{label}: the cluster did no work around the crash"
        );

        let lin = check_linearizability(&result.trace);
        assert!(lin.ok(), "{label}: {:#?}", lin.violations);
        let atomic = check_atomicity(&result.trace);
        assert!(atomic.ok(), "{label}: {:#?}", atomic.violations);
        let conserved = check_conservation(&result.trace);
        assert!(conserved.ok(), "{label}: {:#?}", conserved.violations);
    }
}

#[test]
fn failover_rebuilds_journaled_actors_elsewhere() {
    let sc = crashy(Engine::Psac { max_parallel: 8 }, 99);
    let result = run_scenario(&sc).expect("run");
    let moved: Vec<(&String, u32)> = result
        .trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            TraceKind::Failover { stream, to_node } => Some((stream, *to_node)),
            _ => None,
        })
        .collect();
    assert!(!moved.is_empty(), "nothing failed over despite journaled state on node 1");
    for (stream, to_node) in moved {
        assert_ne!(to_node, 1, "{stream} failed over onto the crashed node");
    }
}
