//! End-to-end properties of scenario runs, comparisons and sweeps.

use mgcosim::scenario::output::{metrics_json, parse_trace_csv, trace_csv};
use mgcosim::scenario::run::settle_trace;
use mgcosim::scenario::{bundled_scenario, compare, gain_sweep, run, ScenarioFile, Trace, Verdict};

fn scenario(name: &str) -> ScenarioFile {
    bundled_scenario(name).unwrap()
}

fn shortened(name: &str, t_end: f64) -> ScenarioFile {
    let mut s = scenario(name);
    s.master.t_end_s = t_end;
    s
}

#[test]
fn centralized_presets_compare_as_four_settled_rows() {
    let names = ["ideal", "network-1", "network-2", "network-3"];
    let set: Vec<_> = names
        .iter()
        .map(|n| scenario(&format!("paper-baseline-centralized-{n}")))
        .collect();
    let report = compare(&set).unwrap();
    assert_eq!(report.rows.len(), 4);
    for (row, n) in report.rows.iter().zip(names) {
        assert_eq!(row.network, n);
        assert_eq!(row.verdict, Verdict::Settled, "{}", row.scenario);
    }
    assert_eq!(report.table().lines().count(), 5);
}

#[test]
fn distributed_ideal_and_network3_compare_as_settled_and_oscillating() {
    let set = [
        scenario("paper-baseline-distributed-ideal"),
        scenario("paper-baseline-distributed-network-3"),
    ];
    let report = compare(&set).unwrap();
    let verdicts: Vec<_> = report.rows.iter().map(|r| r.verdict).collect();
    assert_eq!(verdicts, [Verdict::Settled, Verdict::Oscillating]);
}

#[test]
fn comparing_modes_is_rejected() {
    let set = [
        scenario("paper-baseline-centralized-ideal"),
        scenario("paper-baseline-distributed-ideal"),
    ];
    let err = compare(&set).unwrap_err().to_string();
    assert!(err.contains("control sections differ"), "{err}");
}

#[test]
fn same_file_gives_identical_bytes() {
    let s = shortened("paper-baseline-distributed-network-2", 70.0);
    let a = run(&s).unwrap();
    let b = run(&s).unwrap();
    assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    assert_eq!(metrics_json(&a.metrics), metrics_json(&b.metrics));
    assert_eq!(a.latency_dump, b.latency_dump);
}

#[test]
fn seed_changes_sampled_latencies_only_under_noise() {
    let mut s = shortened("paper-baseline-centralized-network-2", 62.0);
    let a = run(&s).unwrap();
    s.metadata.seed += 1;
    let b = run(&s).unwrap();
    assert_ne!(a.latency_dump, b.latency_dump);

    let mut ideal = shortened("paper-baseline-centralized-ideal", 62.0);
    let c = run(&ideal).unwrap();
    ideal.metadata.seed += 1;
    let d = run(&ideal).unwrap();
    assert_eq!(trace_csv(&c.trace), trace_csv(&d.trace));
}

fn every_kth(trace: &Trace, k: usize) -> Trace {
    Trace {
        columns: trace.columns.clone(),
        times: trace.times.iter().step_by(k).copied().collect(),
        rows: trace.rows.iter().step_by(k).cloned().collect(),
    }
}

#[test]
fn decimation_does_not_move_the_verdict() {
    for name in [
        "paper-baseline-centralized-network-1",
        "paper-baseline-distributed-network-2",
        "paper-baseline-distributed-network-3",
    ] {
        let mut s = scenario(name);
        s.outputs.decimation = 1;
        let out = run(&s).unwrap();
        let reference = out.metrics.reference_hz;
        let full = settle_trace(&out.trace, &s, reference);
        assert_eq!(full.verdict, out.metrics.verdict, "{name}");
        for k in [2usize, 10, 50] {
            let coarse = settle_trace(&every_kth(&out.trace, k), &s, reference);
            assert_eq!(coarse.verdict, full.verdict, "{name} k = {k}");
            if let (Some(a), Some(b)) = (full.settling_time_s, coarse.settling_time_s) {
                let tol = k as f64 * s.master.step_s + 1e-9;
                assert!((a - b).abs() <= tol, "{name} k = {k}: {a} vs {b}");
            } else {
                assert_eq!(full.settling_time_s, coarse.settling_time_s);
            }
        }
    }
}

#[test]
fn settled_means_trailing_window_inside_band() {
    for name in [
        "paper-baseline-centralized-network-2",
        "paper-baseline-distributed-ideal",
        "paper-baseline-distributed-network-3",
    ] {
        let s = scenario(name);
        let out = run(&s).unwrap();
        let m = &out.metrics;
        let trace = parse_trace_csv(&trace_csv(&out.trace)).unwrap();
        let start = s.master.t_end_s - s.outputs.trailing_window_s;
        let inside = trace
            .times
            .iter()
            .zip(trace.frequencies())
            .filter(|(t, _)| **t >= start - 1e-9)
            .all(|(_, f)| f.iter().all(|x| (x - m.reference_hz).abs() <= m.settling_band_hz));
        assert_eq!(inside, m.verdict == Verdict::Settled, "{name}");
    }
}

#[test]
fn primary_only_settles_at_the_droop_frequency_not_f0() {
    let mut s = scenario("paper-baseline");
    s.control.mode = mgcosim::scenario::ControlMode::PrimaryOnly;
    let out = run(&s).unwrap();
    assert_eq!(out.metrics.verdict, Verdict::Settled);
    assert!(out.metrics.reference_hz < s.plant.f0_hz - 0.1);
    assert!(out.latency_dump.is_none());
    assert!(out.trace.column("df_1").unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn sweep_contains_settled_base_point_under_ideal_network() {
    let s = shortened("paper-baseline-distributed-ideal", 75.0);
    let report = gain_sweep(&s, &[0.2], &[0.5, 1.0]).unwrap();
    assert_eq!(report.points.len(), 2);
    assert_eq!(report.points[1].verdict, Verdict::Settled);
    assert!(report.best.is_some());
}

#[test]
fn sweep_report_is_reproducible() {
    let s = shortened("paper-baseline-distributed-network-3", 70.0);
    let a = gain_sweep(&s, &[0.1, 0.2], &[0.1, 1.0]).unwrap();
    let b = gain_sweep(&s, &[0.1, 0.2], &[0.1, 1.0]).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.table(), b.table());
    let seeds: std::collections::BTreeSet<u64> = a.points.iter().map(|p| p.seed).collect();
    assert_eq!(seeds.len(), 4);
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let s = scenario("paper-baseline");
    assert!(gain_sweep(&s, &[], &[1.0]).is_err());
    assert!(gain_sweep(&s, &[0.2], &[]).is_err());
}

#[test]
fn consensus_counters_stay_in_step_between_neighbours() {
    for preset in ["ideal", "network-1", "network-2", "network-3"] {
        let s = shortened(&format!("paper-baseline-distributed-{preset}"), 30.0);
        let m = run(&s).unwrap().metrics;
        let c = m.consensus.unwrap();
        assert!(c.max_neighbor_skew <= 1, "{preset}: {c:?}");
        assert_eq!(c.protocol_errors, 0);
        if preset == "ideal" {
            assert_eq!(c.max_counter_skew, 0);
            assert_eq!(c.rounds_min, c.rounds_max);
        }
    }
}
