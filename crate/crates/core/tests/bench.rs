use octo::bench::{
    acks_checks, analyze_round, combine, run_experiment, scaling_checks, AgentLog, BenchError,
    ClusterSection, ExperimentKind, ExperimentSpec, Harness, Role, Sample,
};
use octo::trigger::TimelinePoint;

fn harness() -> Harness {
    let cluster = ClusterSection {
        brokers: 1,
        broker_ingress_bytes_per_sec: None,
        notes: String::new(),
    };
    Harness::start(&cluster, None).unwrap()
}

#[test]
fn empty_topic_is_an_error() {
    let h = harness();
    h.create_topic("idle", 2, 1).unwrap();
    let err = h.consume_round(&["idle".to_string()], 1).unwrap_err();
    assert!(matches!(err, BenchError::EmptyTopic(_)));
    assert_eq!(err.code(), "EMPTY_TOPIC");
}

#[test]
fn throughput_run_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ExperimentSpec::new("smoke", ExperimentKind::Throughput);
    s.cluster.brokers = 2;
    s.topics.partitions = 2;
    s.topics.replication_factor = 2;
    s.producers.count = 2;
    s.producers.events_per_producer = 200;
    s.consumers.count = 2;
    let out = run_experiment(&s).unwrap();
    assert!(out.passed(), "{:?}", out.checks);
    assert_eq!(out.report["producer"]["rounds_used"], 3);
    assert_eq!(out.report["producer"]["n"], 1200);
    assert_eq!(out.report["consumer"]["n"], 1200);
    let files = out.write(dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("smoke.rounds.csv")).unwrap();
    assert!(csv.starts_with("label,round,n,t1_ms"));
    assert_eq!(csv.lines().count(), 1 + 6);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("smoke.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "throughput");
}

fn round(t: f64, lat_ms: u64) -> octo::bench::RoundReport {
    // 100 events over 100/t seconds with constant latency
    let span_us = (100.0 / t * 1e6) as u64;
    let samples = (0..100)
        .map(|i| Sample {
            start_us: i * span_us / 100,
            end_us: if i == 99 {
                span_us
            } else {
                i * span_us / 100 + lat_ms * 1000
            },
        })
        .collect();
    analyze_round(
        0,
        &[AgentLog {
            agent: "p".into(),
            role: Role::Producer,
            samples,
            failures: 0,
            errors: vec![],
        }],
    )
    .unwrap()
}

#[test]
fn acks_trend_checks() {
    let good = vec![
        combine("0", vec![round(300.0, 1)]),
        combine("1", vec![round(200.0, 2)]),
        combine("all", vec![round(100.0, 9)]),
    ];
    assert!(acks_checks(&good, 2).iter().all(|c| c.ok));
    let bad = vec![
        combine("0", vec![round(150.0, 1)]),
        combine("1", vec![round(200.0, 2)]),
        combine("all", vec![round(100.0, 9)]),
    ];
    assert!(!acks_checks(&bad, 2)[0].ok);
    // one replica: acks=1 and ALL must agree within 10%
    let rf1 = vec![
        combine("0", vec![round(300.0, 1)]),
        combine("1", vec![round(200.0, 2)]),
        combine("all", vec![round(190.0, 2)]),
    ];
    let c = acks_checks(&rf1, 1);
    assert!(c[0].ok && c[0].name.contains("10%"), "{c:?}");
    let rf1_far = vec![
        rf1[0].clone(),
        rf1[1].clone(),
        combine("all", vec![round(150.0, 2)]),
    ];
    assert!(!acks_checks(&rf1_far, 1)[0].ok);
}

fn tl(series: &[(u32, u64)]) -> Vec<TimelinePoint> {
    series
        .iter()
        .enumerate()
        .map(|(i, &(concurrency, lag))| TimelinePoint {
            tick: i as u64,
            at_ms: i as u64 * 1000,
            concurrency,
            lag,
        })
        .collect()
}

#[test]
fn scaling_shape_checks() {
    let t = ExperimentSpec::new("x", ExperimentKind::TriggerScaling).trigger;
    let good = tl(&[
        (1, 1600),
        (4, 1590),
        (16, 1500),
        (16, 900),
        (16, 200),
        (1, 0),
        (1, 0),
    ]);
    let checks = scaling_checks(&good, &t, 16);
    assert!(checks.iter().all(|c| c.ok), "{checks:?}");

    let slow = tl(&[(1, 1600), (4, 1590), (4, 35), (1, 0)]);
    let c = scaling_checks(&slow, &t, 16);
    assert!(!c[0].ok, "never reached 16");
    assert!(c[3].ok, "but each step obeyed the law");

    let sticky = tl(&[(1, 1600), (4, 1590), (16, 1500), (16, 0), (8, 0), (1, 0)]);
    assert!(!scaling_checks(&sticky, &t, 16)[2].ok);

    let wobbly = tl(&[(1, 1600), (4, 1590), (16, 1500), (4, 30), (16, 200), (1, 0)]);
    assert!(!scaling_checks(&wobbly, &t, 16)[1].ok);
}

#[test]
fn trigger_scaling_run_emits_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ExperimentSpec::new("ramp", ExperimentKind::TriggerScaling);
    s.trigger.partitions = 16;
    s.trigger.events = 640;
    s.trigger.sleep_ms = 20;
    s.trigger.eval_interval_ms = 500;
    let out = run_experiment(&s).unwrap();
    for c in &out.checks {
        println!("{} {}: {}", c.ok, c.name, c.detail);
    }
    assert!(out.passed());
    out.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("ramp.timeline.csv")).unwrap();
    let conc: Vec<u32> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(&conc[..3], &[1, 4, 16]);
    assert_eq!(*conc.last().unwrap(), 1);
}

#[test]
fn single_broker_multitenancy_is_flat() {
    let mut s = ExperimentSpec::new("flat", ExperimentKind::Multitenancy);
    s.rounds = 1;
    s.cluster.brokers = 1;
    s.cluster.broker_ingress_bytes_per_sec = Some(1_000_000);
    s.producers.count = 4;
    s.producers.events_per_producer = 300;
    s.multitenancy.topic_counts = vec![1, 4, 8];
    let out = run_experiment(&s).unwrap();
    let t: Vec<f64> = out.report["curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["producer_throughput"].as_f64().unwrap())
        .collect();
    // one leader for every topic: no growth to find
    assert!(((t[1] - t[0]) / t[0]).abs() < 0.1, "{t:?}");
    assert!(out.checks[1].ok, "{:?}", out.checks);
}

#[test]
fn shipped_specs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../bench");
    let mut n = 0;
    for ent in std::fs::read_dir(&dir).unwrap() {
        let p = ent.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            ExperimentSpec::from_file(&p).unwrap_or_else(|e| panic!("{}: {e:#}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
