use chaintwin::rng::{self, Purpose};
use chaintwin::sim::{
    aggregate_day, effective_rate, feature, generate_scenario_dataset, read_dataset, run_replication,
    sample_disruption_window, sample_event_time, write_dataset, DayAccumulator, DailyRecord, RateRole, ReplicationTrace,
    Scenario, ScenarioSpec, SimParams,
};
use chaintwin::data::RecoveryRule;
use proptest::prelude::*;

fn check_trace(params: &SimParams, t: &ReplicationTrace) {
    assert_eq!(t.records.len(), params.records_per_replication());
    assert!(t.records.windows(2).all(|w| w[1].day == w[0].day + 1));
    assert_eq!(t.records[0].day, params.warmup);
    let a = t.audit;
    assert_eq!(a.buffer_overflows, 0, "buffer overflow");
    assert_eq!(a.blocked_without_full_downstream, 0, "blocked with room downstream");
    assert_eq!(a.fcfs_violations, 0, "overtaking");
    assert_eq!(a.disrupted_completions, 0, "disrupted stage completed a service");
    for b in &t.balances {
        assert_eq!(b.cumulative_arrivals, b.cumulative_fulfilled + b.in_process + b.backlog, "day {}", b.day);
        for (q, cap) in b.max_queue.iter().zip(params.buffer_caps) {
            if let Some(c) = cap {
                assert!(*q <= c, "day {}: queue {q} over cap {c}", b.day);
            }
        }
    }
    for r in &t.records {
        let f = &r.features;
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(f[feature::OUTPUT].fract(), 0.0);
        assert!(f[feature::LEAD_TIME] + 1e-12 >= f[feature::FLOW_TIME]);
        let wt = f[feature::LEAD_TIME] - f[feature::FLOW_TIME];
        assert!((f[feature::WAITING_TIME] - wt).abs() < 1e-9);
        for (i, cap) in params.buffer_caps.iter().enumerate() {
            if let Some(c) = cap {
                assert!(f[feature::QUEUE_LEN[i]] <= *c as f64);
            }
        }
    }
}

#[test]
fn exponential_sample_mean() {
    let mut r = rng::from_seed(11);
    let n = 1_000_000;
    let sum: f64 = (0..n).map(|_| sample_event_time(18.0, &mut r).unwrap().unwrap()).sum();
    let mean = sum / n as f64;
    assert!(mean > 0.995 / 18.0 && mean < 1.005 / 18.0, "{mean}");
}

#[test]
fn zero_rate_never_fires_and_negative_rejected() {
    let mut r = rng::from_seed(1);
    assert_eq!(sample_event_time(0.0, &mut r).unwrap(), None);
    assert!(sample_event_time(-1.0, &mut r).is_err());
    let a: Vec<_> = {
        let mut r = rng::stream(5, Purpose::Events, &[1, 2]);
        (0..5).map(|_| sample_event_time(3.0, &mut r).unwrap()).collect()
    };
    let b: Vec<_> = {
        let mut r = rng::stream(5, Purpose::Events, &[1, 2]);
        (0..5).map(|_| sample_event_time(3.0, &mut r).unwrap()).collect()
    };
    assert_eq!(a, b);
}

#[test]
fn effective_rate_cases() {
    let s1 = ScenarioSpec::disrupted(Scenario::S1, 400, 40).unwrap();
    let s4 = ScenarioSpec::disrupted(Scenario::S4, 400, 40).unwrap();
    assert_eq!(effective_rate(18.0, 0.0, &s1, 410.0, RateRole::Stage(0)), 0.0);
    assert_eq!(effective_rate(19.0, 0.0, &s1, 410.0, RateRole::Stage(1)), 19.0);
    assert_eq!(effective_rate(18.0, 0.0, &s1, 399.9, RateRole::Stage(0)), 18.0);
    assert_eq!(effective_rate(18.0, 0.0, &s1, 440.0, RateRole::Stage(0)), 18.0);
    assert_eq!(effective_rate(15.0, 30.0, &s4, 420.0, RateRole::Arrival), 30.0);
    assert_eq!(effective_rate(18.0, 0.0, &s4, 420.0, RateRole::Stage(0)), 18.0);
    let s0 = ScenarioSpec::normal();
    for t in [0.0, 400.0, 1000.0] {
        assert_eq!(effective_rate(15.0, 30.0, &s0, t, RateRole::Arrival), 15.0);
    }
    assert!(ScenarioSpec::disrupted(Scenario::S0, 1, 1).is_err());
}

#[test]
fn normal_replication_has_916_records_and_holds_invariants() {
    let p = SimParams::default();
    let t = run_replication(&p, &ScenarioSpec::normal(), 0).unwrap();
    assert_eq!(t.records.len(), 916);
    assert!(t.spec.window.is_none());
    check_trace(&p, &t);
}

#[test]
fn manufacturer_outage_fills_buffer_and_stops_output() {
    let p = SimParams::default();
    let spec = ScenarioSpec::disrupted(Scenario::S2, 400, 45).unwrap();
    let t = run_replication(&p, &spec, 3).unwrap();
    check_trace(&p, &t);
    let inside: Vec<&DailyRecord> = t.records.iter().filter(|r| (405..445).contains(&r.day)).collect();
    assert_eq!(inside.len(), 40);
    for r in inside {
        assert!((r.features[feature::QUEUE_LEN[1]] - 15.0).abs() < 1e-12, "day {}", r.day);
        assert_eq!(r.output(), 0.0, "day {}", r.day);
    }
}

#[test]
fn zero_arrivals_give_an_empty_line() {
    let p = SimParams {
        arrival_rate: 0.0,
        ..SimParams::default()
    };
    let t = run_replication(&p, &ScenarioSpec::normal(), 0).unwrap();
    check_trace(&p, &t);
    for r in &t.records {
        assert_eq!(r.output(), 0.0);
        for i in 1..13 {
            assert_eq!(r.features[i], 0.0, "feature {i} day {}", r.day);
        }
    }
}

#[test]
fn replications_are_deterministic() {
    let p = SimParams::default();
    let spec = ScenarioSpec::disrupted(Scenario::S3, 350, 50).unwrap();
    let a = run_replication(&p, &spec, 7).unwrap();
    let b = run_replication(&p, &spec, 7).unwrap();
    assert_eq!(a, b);
    let c = run_replication(&p, &spec, 8).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn dataset_csv_is_identical_on_rerun() {
    let p = SimParams::default();
    let rule = RecoveryRule::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let ds = generate_scenario_dataset(&p, Scenario::S3, 2).unwrap();
        write_dataset(d.path(), &ds, &rule).unwrap();
    }
    for name in ["manifest.json", "rep_0000.csv", "rep_0001.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let (manifest, back) = read_dataset(dirs[0].path()).unwrap();
    assert_eq!(manifest.replications.len(), 2);
    assert_eq!(back.traces.len(), 2);
    let orig = generate_scenario_dataset(&p, Scenario::S3, 2).unwrap();
    for (x, y) in orig.traces.iter().zip(&back.traces) {
        assert_eq!(x.spec, y.spec);
        assert_eq!(x.records, y.records);
    }
}

#[test]
fn onset_and_duration_means() {
    let p = SimParams::default();
    let n = 10_000;
    let (mut so, mut sd) = (0.0, 0.0);
    for rep in 0..n {
        let w = sample_disruption_window(&p, Scenario::S2, rep);
        assert!((300..=600).contains(&w.onset) && (30..=60).contains(&w.duration));
        so += w.onset as f64;
        sd += w.duration as f64;
    }
    let (mo, md) = (so / n as f64, sd / n as f64);
    assert!((mo - 450.0).abs() < 3.0, "{mo}");
    assert!((md - 45.0).abs() < 0.35, "{md}");
}

#[test]
fn aggregate_day_cases() {
    let mut acc = DayAccumulator::default();
    for _ in 0..24 {
        acc.record_snapshot([0, 1, 2], 5);
    }
    acc.record_fulfilment(0.1, [0.05, 0.05, 0.05], 3.0, 1.0);
    acc.record_fulfilment(0.3, [0.05, 0.05, 0.05], 5.0, 2.0);
    let r = aggregate_day(10, &acc, None);
    assert_eq!(r.wip(), 5.0);
    assert_eq!(r.features[feature::QUEUE_LEN[2]], 2.0);
    assert_eq!(r.features[feature::LEAD_TIME], 4.0);
    assert_eq!(r.features[feature::FLOW_TIME], 1.5);
    assert_eq!(r.features[feature::WAITING_TIME], 2.5);
    assert_eq!(r.output(), 2.0);

    let mut idle = DayAccumulator::default();
    for _ in 0..24 {
        idle.record_snapshot([3, 15, 10], 40);
    }
    let next = aggregate_day(11, &idle, Some(&r));
    assert_eq!(next.output(), 0.0);
    for i in [0, 1, 2, 3, 8, 9, 10, 11] {
        assert_eq!(next.features[i], r.features[i], "feature {i}");
    }
    assert_eq!(next.wip(), 40.0);
}

#[test]
fn blocked_day_carries_time_features_in_a_real_trace() {
    let p = SimParams::default();
    let spec = ScenarioSpec::disrupted(Scenario::S3, 420, 40).unwrap();
    let t = run_replication(&p, &spec, 1).unwrap();
    let idx = t.records.iter().position(|r| r.day == 430).unwrap();
    let (prev, day) = (&t.records[idx - 1], &t.records[idx]);
    assert_eq!(day.output(), 0.0);
    for i in [0, 1, 2, 3, 8, 9, 10, 11] {
        assert_eq!(day.features[i], prev.features[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn every_trace_holds_conservation_and_blocking(s in 0usize..5, rep in 0usize..1000, seed in any::<u64>()) {
        let p = SimParams { base_seed: seed, ..SimParams::default() };
        let scenario = Scenario::ALL[s];
        let spec = chaintwin::sim::scenario_spec(&p, scenario, rep);
        let t = run_replication(&p, &spec, rep).unwrap();
        check_trace(&p, &t);
    }
}
