use std::collections::{HashMap, HashSet};

use dropsim_core::netgraph::tx_time;
use dropsim_core::sim::SimOptions;
use dropsim_core::telemetry::{TraceEvent, TraceRecord};
use dropsim_core::{parse_scenario, run_in_memory, summarize_trace, Scenario, DROP_SCENARIO, NODROP_SCENARIO};

fn drop_scn() -> Scenario {
    parse_scenario(DROP_SCENARIO).unwrap()
}

fn nodrop_scn() -> Scenario {
    parse_scenario(NODROP_SCENARIO).unwrap()
}

fn red_scn() -> Scenario {
    let text = DROP_SCENARIO.replace(
        "link from=n3 to=n4 bw=1Mb delay=20ms queue=droptail limit=10",
        "link from=n3 to=n4 bw=1Mb delay=20ms queue=red limit=30 wq=0.02",
    );
    let s = parse_scenario(&text).unwrap();
    assert!(matches!(
        s.links[3].queue,
        dropsim_core::scenario::QueueSpec::Red { .. }
    ));
    s
}

fn records(trace: &[u8]) -> Vec<TraceRecord> {
    std::str::from_utf8(trace)
        .unwrap()
        .lines()
        .map(|l| TraceRecord::parse(l).unwrap())
        .collect()
}

#[test]
fn shipped_scenarios_differ_only_in_rate() {
    let a = drop_scn();
    let b = nodrop_scn();
    assert_eq!(a.links, b.links);
    assert_eq!(a.agents, b.agents);
    for (x, y) in a.apps.iter().zip(&b.apps) {
        assert_eq!(x.config.rate, 1e6);
        assert_eq!(y.config.rate, 1e5);
        let mut y = y.clone();
        y.config.rate = x.config.rate;
        assert_eq!(x, &y);
    }
}

#[test]
fn conservation_holds_for_every_flow() {
    for s in [drop_scn(), nodrop_scn(), red_scn()] {
        let out = run_in_memory(&s, SimOptions::default()).unwrap();
        for (flow, c) in &out.report.flows {
            assert!(c.conserved(), "flow {flow}: {c:?}");
        }
        let from_trace = summarize_trace(out.trace.as_deref().unwrap()).unwrap();
        assert_eq!(from_trace, out.report.trace_view());
    }
}

#[test]
fn red_bottleneck_still_drops_and_recovers() {
    let out = run_in_memory(&red_scn(), SimOptions::default()).unwrap();
    assert!(out.report.drops_at(3) > 0);
    for sink in &out.sinks {
        assert!(sink.total_bytes > 0);
    }
}

#[test]
fn trace_invariants() {
    let out = run_in_memory(&drop_scn(), SimOptions::default()).unwrap();
    let recs = records(out.trace.as_deref().unwrap());
    let mut enqueued = HashSet::new();
    let mut last = 0.0;
    for r in &recs {
        assert!(r.time >= last);
        last = r.time;
        match r.event {
            TraceEvent::Enqueue => {
                enqueued.insert(r.uid);
            }
            TraceEvent::Drop => assert!(enqueued.contains(&r.uid), "orphan drop {r:?}"),
            _ => {}
        }
    }
    let drops_n3 = recs
        .iter()
        .filter(|r| r.event == TraceEvent::Drop && r.from == 3)
        .count() as u64;
    assert_eq!(drops_n3, out.report.drops_at(3));
}

#[test]
fn link_serialization_spacing() {
    let s = drop_scn();
    let out = run_in_memory(&s, SimOptions::default()).unwrap();
    let bw: HashMap<(u32, u32), f64> = s.links.iter().map(|l| ((l.from.0, l.to.0), l.bandwidth)).collect();
    let mut last: HashMap<(u32, u32), (f64, u32)> = HashMap::new();
    for r in records(out.trace.as_deref().unwrap()) {
        if r.event != TraceEvent::Dequeue {
            continue;
        }
        let key = (r.from, r.to);
        if let Some((t, size)) = last.get(&key) {
            let min_gap = tx_time(*size, bw[&key]);
            assert!(r.time - t >= min_gap - 1e-6, "link {key:?} at {}", r.time);
        }
        last.insert(key, (r.time, r.size));
    }
}

#[test]
fn droptail_drops_only_when_full() {
    // Replay the trace and track buffer occupancy per link.
    let s = drop_scn();
    let out = run_in_memory(&s, SimOptions::default()).unwrap();
    let limit: HashMap<(u32, u32), usize> = s.links.iter().map(|l| ((l.from.0, l.to.0), l.queue.limit())).collect();
    let mut occ: HashMap<(u32, u32), usize> = HashMap::new();
    let recs = records(out.trace.as_deref().unwrap());
    let mut i = 0;
    while i < recs.len() {
        let r = &recs[i];
        let key = (r.from, r.to);
        let q = occ.entry(key).or_default();
        match r.event {
            TraceEvent::Enqueue => {
                let dropped = recs
                    .get(i + 1)
                    .is_some_and(|n| n.event == TraceEvent::Drop && n.uid == r.uid);
                assert_eq!(dropped, *q == limit[&key], "at {}", r.time);
                if dropped {
                    i += 1;
                } else {
                    *q += 1;
                }
                assert!(*q <= limit[&key]);
            }
            TraceEvent::Dequeue => *q -= 1,
            _ => {}
        }
        i += 1;
    }
}

#[test]
fn identical_seeds_execute_identical_event_sequences() {
    let opts = SimOptions {
        log_events: true,
        log_cwnd: false,
    };
    for s in [drop_scn(), nodrop_scn()] {
        let a = run_in_memory(&s, opts).unwrap();
        let b = run_in_memory(&s, opts).unwrap();
        assert!(!a.event_log.is_empty());
        assert_eq!(a.event_log, b.event_log);
        assert_eq!(a.trace, b.trace);
        for w in a.event_log.windows(2) {
            assert!(w[0].0 <= w[1].0);
        }
    }
}

#[test]
fn different_seeds_change_lightly_loaded_runs() {
    let mut s = nodrop_scn();
    let a = run_in_memory(&s, SimOptions::default()).unwrap();
    s.seed = 2;
    let b = run_in_memory(&s, SimOptions::default()).unwrap();
    assert_ne!(a.trace, b.trace);
}

#[test]
fn lossless_run_acknowledges_everything() {
    let mut s = nodrop_scn();
    for app in &mut s.apps {
        app.config.stop_at = 3.0;
    }
    let out = run_in_memory(&s, SimOptions::default()).unwrap();
    assert_eq!(out.report.total_drops(), 0);
    for (conn, sink) in out.conns.iter().zip(&out.sinks) {
        assert!(conn.max_sent > 0);
        assert_eq!(conn.highest_acked, conn.max_sent);
        assert_eq!(sink.expected_seq, conn.max_sent);
        assert_eq!(conn.retransmit_count, 0);
    }
}

#[test]
fn sink_bytes_match_distinct_packets_and_estimators_stay_finite() {
    for s in [drop_scn(), red_scn(), nodrop_scn()] {
        let out = run_in_memory(&s, SimOptions::default()).unwrap();
        for (conn, sink) in out.conns.iter().zip(&out.sinks) {
            assert_eq!(sink.total_bytes, sink.total_packets * conn.mss as u64);
            assert!(sink.total_packets <= conn.max_sent);
            let srtt = conn.srtt.unwrap();
            assert!(srtt.is_finite() && srtt > 0.0);
            assert!(conn.rttvar.is_finite() && conn.rttvar >= 0.0);
            assert!(conn.rto.is_finite() && conn.rto > 0.0);
            assert!(conn.in_flight() <= conn.window());
        }
    }
}

#[test]
fn in_flight_never_exceeds_window_at_ack_arrivals() {
    let opts = SimOptions {
        log_events: false,
        log_cwnd: true,
    };
    let s = drop_scn();
    let out = run_in_memory(&s, opts).unwrap();
    assert!(!out.cwnd_log.is_empty());
    for c in &out.cwnd_log {
        assert!(c.cwnd_after >= 1.0);
        assert!(c.ssthresh >= 2.0);
        assert!(c.in_flight <= c.window, "{c:?}");
        assert_eq!(c.window, c.cwnd_after.min(64.0).floor() as u64);
    }
}

#[test]
fn zero_apps_means_zero_traffic() {
    let text: String = DROP_SCENARIO
        .lines()
        .filter(|l| !l.starts_with("app "))
        .map(|l| format!("{l}\n"))
        .collect();
    let s = parse_scenario(&text).unwrap();
    let out = run_in_memory(&s, SimOptions::default()).unwrap();
    for c in out.report.flows.values() {
        assert_eq!(*c, Default::default());
    }
    assert_eq!(out.report.trace_lines, 0);
    assert!(out.trace.unwrap().is_empty());
    for series in &out.series {
        assert_eq!(series.samples.len(), 50);
        assert!(series.samples.iter().all(|s| s.bits_per_second == 0.0));
    }
}

#[test]
fn samples_cover_duration_at_fixed_step() {
    let out = run_in_memory(&nodrop_scn(), SimOptions::default()).unwrap();
    for series in &out.series {
        assert_eq!(series.samples.len(), 50);
        for (k, s) in series.samples.iter().enumerate() {
            assert!((s.t - (k + 1) as f64 * 0.1).abs() < 1e-9);
            assert_eq!(s.interval, 0.1);
        }
        let rendered = dropsim_core::telemetry::xgraph_render(series);
        let times: Vec<&str> = rendered.lines().skip(1).map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(times.first(), Some(&"0.100"));
        assert_eq!(times.last(), Some(&"5.000"));
    }
}

#[test]
fn uneven_duration_gets_a_short_final_sample() {
    let mut s = nodrop_scn();
    s.duration = 4.95;
    let out = run_in_memory(&s, SimOptions::default()).unwrap();
    let samples = &out.series[0].samples;
    assert_eq!(samples.len(), 50);
    let last = samples.last().unwrap();
    assert!((last.t - 4.95).abs() < 1e-12);
    assert!((last.interval - 0.05).abs() < 1e-9);
    for (series, sink) in out.series.iter().zip(&out.sinks) {
        let sum: u64 = series.samples.iter().map(|s| s.bytes).sum();
        assert_eq!(sum, sink.total_bytes);
    }
}
