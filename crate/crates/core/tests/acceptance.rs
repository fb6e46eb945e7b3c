//! Acceptance run. Every criterion executes at its stated scale and prints
//! one PASS/FAIL line; the process exits non-zero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 8 9`.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context};
use octo::bench::{run_experiment, ExperimentOutput, ExperimentSpec};
use octo::broker::{Acks, Cluster, ClusterConfig, OffsetTarget, Principal, TopicSpec};
use octo::client::{Consumer, ConsumerConfig, Producer, ProducerConfig, StartPosition};
use octo::clock::{Clock, ManualClock};
use octo::demo::{run_scenario, DemoOptions, SCENARIOS};
use octo::protocol::codec::Status;
use octo::trigger::{
    ActionRef, Batch, CrashPoint, TriggerEngine, TriggerError, TriggerSpec, TriggerUpdate,
    HARD_MAX_BYTES, HARD_MAX_RECORDS,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }
}

type Run = fn() -> anyhow::Result<Verdict>;

const CRITERIA: [(u32, &str, Run); 12] = [
    (1, "acks trend 0 > 1 > ALL", acks_trend),
    (2, "read >= write", read_ge_write),
    (3, "trigger autoscaling ramp", trigger_autoscaling),
    (4, "trigger partition scaling", partition_scaling),
    (5, "multi-tenancy plateau", multitenancy),
    (6, "at-least-once under crashes", at_least_once),
    (7, "acks=ALL durability under failover", acks_all_failover),
    (8, "pattern oracle equivalence", pattern_oracle),
    (9, "protocol robustness", protocol_robustness),
    (10, "trigger hard limits", hard_limits),
    (11, "retention boundary", retention),
    (12, "demo scenarios", demos),
];

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let v = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => Verdict::new(false, format!("error: {e:#}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::new(false, format!("panic: {msg}"))
            }
        };
        let tag = if v.ok { "PASS" } else { "FAIL" };
        println!(
            "{tag} [{n:>2}] {name} ({:.1}s): {}",
            started.elapsed().as_secs_f64(),
            v.detail
        );
        let _ = std::io::stdout().flush();
        if !v.ok {
            failed.push(n);
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}

fn results_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn shipped_spec(name: &str) -> anyhow::Result<ExperimentSpec> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../bench")
        .join(format!("{name}.toml"));
    ExperimentSpec::from_file(&p)
}

fn summarize(out: &ExperimentOutput) -> String {
    out.checks
        .iter()
        .map(|c| {
            let mark = match (c.gating, c.ok) {
                (false, _) => "info",
                (true, true) => "ok",
                (true, false) => "FAILED",
            };
            format!("[{mark}] {}: {}", c.name, c.detail)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn bench(name: &str, budget: Option<Duration>) -> anyhow::Result<Verdict> {
    let spec = shipped_spec(name)?;
    let started = Instant::now();
    let out = run_experiment(&spec)?;
    let elapsed = started.elapsed();
    out.write(&results_dir())?;
    let mut ok = out.passed() && !out.checks.is_empty();
    let mut detail = summarize(&out);
    if let Some(b) = budget {
        ok &= elapsed < b;
        detail.push_str(&format!(
            "; runtime {:.0}s (budget {}s)",
            elapsed.as_secs_f64(),
            b.as_secs()
        ));
    }
    Ok(Verdict::new(ok, detail))
}

fn acks_trend() -> anyhow::Result<Verdict> {
    bench("acks-sweep", Some(Duration::from_secs(300)))
}

fn read_ge_write() -> anyhow::Result<Verdict> {
    bench("consumer-vs-producer", None)
}

fn trigger_autoscaling() -> anyhow::Result<Verdict> {
    bench("trigger-scaling", None)
}

fn partition_scaling() -> anyhow::Result<Verdict> {
    bench("partition-scaling", None)
}

fn multitenancy() -> anyhow::Result<Verdict> {
    bench("multitenancy", None)
}

fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    f()
}

const ALO_EVENTS: usize = 10_000;
const ALO_WORKER_KILLS: u64 = 25;
const ALO_CONSUMER_KILLS: u32 = 25;

fn at_least_once() -> anyhow::Result<Verdict> {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(6);
    let env = common::Env::new(2);
    env.cluster
        .create_topic(TopicSpec::new("alo", 4, 2), "alice")?;
    let (key_id, secret) = env.key("alice");

    // trigger path: a recorder action and randomized worker crashes
    let engine = TriggerEngine::new(env.cluster.clone());
    engine.set_retry_base(Duration::from_millis(5));
    let trig_seen: Arc<Mutex<Vec<String>>> = Arc::default();
    {
        let seen = Arc::clone(&trig_seen);
        engine.register_local_action("alo.recorder", move |b: &Batch| {
            let mut s = seen.lock().unwrap();
            s.extend(
                b.events
                    .iter()
                    .map(|e| String::from_utf8_lossy(&e.key).into_owned()),
            );
            Ok(())
        });
    }
    let mut spec = TriggerSpec::new(
        "alo",
        ActionRef::Local {
            name: "alo.recorder".into(),
        },
    );
    spec.start_earliest = true;
    spec.batch_max_records = 50;
    spec.batch_window_ms = 20;
    spec.eval_interval_ms = 500;
    spec.target_lag_per_worker = 500;
    let tid = engine.register(&Principal::identity("alice"), spec)?;
    let points = [
        CrashPoint::BeforeInvoke,
        CrashPoint::BeforeCommit,
        CrashPoint::AfterCommit,
    ];
    for _ in 0..ALO_WORKER_KILLS {
        engine.inject_crash(&tid, points[rng.gen_range(0..3)], rng.gen_range(0..60))?;
    }

    // uniquely keyed events through the wire producer
    let producer = Producer::new(
        env.addrs(),
        &key_id,
        &secret,
        ProducerConfig {
            acks: Acks::All,
            ..ProducerConfig::default()
        },
    )?;
    let keys: Vec<String> = (0..ALO_EVENTS).map(|i| format!("evt-{i:05}")).collect();
    let deliveries = keys
        .iter()
        .enumerate()
        .map(|(i, k)| producer.send("alo", k.as_bytes(), format!("{{\"id\":{i}}}").as_bytes()))
        .collect::<Result<Vec<_>, _>>()?;
    let produced = deliveries.iter().filter(|d| d.wait().is_ok()).count();
    ensure!(
        produced == ALO_EVENTS,
        "only {produced} of {ALO_EVENTS} events were acknowledged"
    );

    let drained = wait_until(Duration::from_secs(240), || {
        engine.compute_pressure(&tid).unwrap_or(u64::MAX) == 0
            && engine.stats(&tid).map(|s| s.crashes).unwrap_or(0) >= ALO_WORKER_KILLS
    });
    let stats = engine.stats(&tid)?;
    let trig = trig_seen.lock().unwrap().clone();
    let trig_unique: HashSet<&str> = trig.iter().map(String::as_str).collect();
    let trig_lost = keys
        .iter()
        .filter(|k| !trig_unique.contains(k.as_str()))
        .count();
    engine.shutdown();

    // consumer path: kill the consumer at random points without committing
    let group = ConsumerConfig {
        group_id: Some("alo.consumer".into()),
        start: StartPosition::Earliest,
        auto_commit_interval_ms: 0,
        max_poll_records: 100,
        ..ConsumerConfig::default()
    };
    let mut cons_seen: Vec<String> = Vec::new();
    let mut cons_unique: HashSet<String> = HashSet::new();
    let mut kills = 0;
    let deadline = Instant::now() + Duration::from_secs(240);
    'outer: while cons_unique.len() < ALO_EVENTS && Instant::now() < deadline {
        let mut c = Consumer::subscribe_all(env.addrs(), &key_id, &secret, "alo", group.clone())?;
        let kill_after = if kills < ALO_CONSUMER_KILLS {
            rng.gen_range(20..300)
        } else {
            usize::MAX
        };
        let mut handled = 0;
        loop {
            if Instant::now() >= deadline {
                break 'outer;
            }
            let batch = c.poll(100, Duration::from_millis(500))?;
            if batch.is_empty() && cons_unique.len() >= ALO_EVENTS {
                break 'outer;
            }
            for r in &batch {
                let k = String::from_utf8_lossy(&r.record.key).into_owned();
                cons_unique.insert(k.clone());
                cons_seen.push(k);
            }
            handled += batch.len();
            if handled >= kill_after {
                kills += 1;
                // dropped without committing what it handled since the last commit
                break;
            }
            if rng.gen_bool(0.5) {
                c.commit_sync()?;
            }
        }
    }
    let cons_lost = keys
        .iter()
        .filter(|k| !cons_unique.contains(k.as_str()))
        .count();
    let elapsed = started.elapsed();

    let ok = drained
        && trig_lost == 0
        && cons_lost == 0
        && stats.crashes >= ALO_WORKER_KILLS
        && kills == ALO_CONSUMER_KILLS
        && elapsed < Duration::from_secs(600);
    Ok(Verdict::new(
        ok,
        format!(
            "{ALO_EVENTS} events; trigger path: {} worker kills, lost {trig_lost}, duplicates {}; \
             consumer path: {kills} consumer kills, lost {cons_lost}, duplicates {}; runtime {:.0}s",
            stats.crashes,
            trig.len() - trig_unique.len(),
            cons_seen.len() - cons_unique.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn acks_all_failover() -> anyhow::Result<Verdict> {
    const TRIALS: u64 = 100;
    const RECORDS: usize = 1000;
    let mut lost_total = 0;
    let mut confirmed_total = 0;
    let mut min_confirmed = usize::MAX;
    let mut rng = StdRng::seed_from_u64(7);
    for trial in 0..TRIALS {
        let env = common::Env::new(2);
        env.cluster
            .create_topic(TopicSpec::new("dur", 2, 2), "alice")?;
        let (key_id, secret) = env.key("alice");
        let producer = Producer::new(
            env.addrs(),
            &key_id,
            &secret,
            ProducerConfig {
                acks: Acks::All,
                retry_backoff_ms: 20,
                ..ProducerConfig::default()
            },
        )?;
        let halt_at = rng.gen_range(0..RECORDS);
        let victim =
            env.cluster.partition_leaders("dur")?[rng.gen_range(0..2)].context("no leader")?;
        let mut pending = Vec::with_capacity(RECORDS);
        for i in 0..RECORDS {
            if i == halt_at {
                env.halt(victim);
            }
            pending.push((
                format!("t{trial}-{i}"),
                producer.send("dur", b"", format!("t{trial}-{i}").as_bytes())?,
            ));
        }
        producer.flush(Duration::from_secs(60));
        let mut confirmed = 0;
        for (value, d) in pending {
            let Some(r) = d.try_get() else { continue };
            if !r.is_ok() {
                continue;
            }
            confirmed += 1;
            let recs = env.cluster.fetch(
                &Principal::Internal,
                "dur",
                r.partition as u32,
                r.offset as u64,
                1,
                usize::MAX,
            );
            let found = recs.is_ok_and(|v| {
                v.first().is_some_and(|rec| {
                    rec.offset == r.offset as u64 && rec.value == value.as_bytes()
                })
            });
            if !found {
                lost_total += 1;
            }
        }
        confirmed_total += confirmed;
        min_confirmed = min_confirmed.min(confirmed);
    }
    Ok(Verdict::new(
        lost_total == 0 && min_confirmed > 0,
        format!(
            "{TRIALS} trials x {RECORDS} records, leader halted at a random point; {confirmed_total} confirmed \
             (min {min_confirmed} per trial), {lost_total} missing after failover"
        ),
    ))
}

fn pattern_oracle() -> anyhow::Result<Verdict> {
    let r = common::oracle_sweep();
    let listing = common::listing_1_cases();
    let listing_ok = listing == vec![(true, true), (false, false)];
    Ok(Verdict::new(
        r.pairs >= 10_000 && r.mismatches == 0 && listing_ok,
        format!(
            "{} pattern/body pairs, {} mismatches{}; listing 1 created/deleted verdicts {:?}",
            r.pairs,
            r.mismatches,
            r.first_mismatch
                .map(|m| format!(" (first: {m:?})"))
                .unwrap_or_default(),
            listing
        ),
    ))
}

fn protocol_robustness() -> anyhow::Result<Verdict> {
    let cases = common::codec_roundtrip(1_000_000).map_err(anyhow::Error::msg);
    let env = common::Env::new(2);
    env.cluster
        .create_topic(TopicSpec::new("t", 2, 2), "alice")?;
    let (k, s) = env.key("alice");
    let before = common::broker_panics();
    let handles: Vec<_> = env
        .servers
        .iter()
        .enumerate()
        .map(|(i, srv)| {
            let (addr, k, s) = (srv.addr(), k.clone(), s.clone());
            std::thread::spawn(move || {
                common::fuzz(addr, &k, &s, "t", Duration::from_secs(60), 90 + i as u64)
            })
        })
        .collect();
    let stats: Vec<common::FuzzStats> = handles
        .into_iter()
        .map(|h| h.join().expect("fuzzer thread"))
        .collect();
    let panics = common::broker_panics() - before;
    let mut alive = true;
    for srv in &env.servers {
        let mut w = common::Wire::connect(srv.addr())?;
        alive &= w.auth(&k, &s).status == Status::Ok;
    }
    let conns: u64 = stats.iter().map(|s| s.connections).sum();
    let frames: u64 = stats.iter().map(|s| s.frames).sum();
    let (ok_cases, case_detail) = match &cases {
        Ok(n) => (
            *n == 1_000_000,
            format!("{n} codec round-trip cases passed"),
        ),
        Err(e) => (false, format!("codec round-trip failed: {e}")),
    };
    Ok(Verdict::new(
        ok_cases && panics == 0 && alive,
        format!(
            "{case_detail}; 60s socket fuzz on 2 brokers: {conns} connections, {frames} frames, {panics} broker \
             panics, brokers {}",
            if alive { "still serving" } else { "NOT serving" }
        ),
    ))
}

fn hard_limits() -> anyhow::Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ClusterConfig::new(dir.path(), 1);
    cfg.heartbeat_interval = Duration::ZERO;
    let cluster = Cluster::open(cfg)?;
    cluster.create_topic(TopicSpec::new("limits", 1, 1), "alice")?;
    let alice = Principal::identity("alice");
    let engine = TriggerEngine::new(cluster.clone());
    let batches: Arc<Mutex<Vec<(usize, u64)>>> = Arc::default();
    {
        let b = Arc::clone(&batches);
        engine.register_local_action("limits.rec", move |batch: &Batch| {
            b.lock()
                .unwrap()
                .push((batch.events.len(), batch.payload_bytes()));
            Ok(())
        });
    }
    let base = {
        let mut s = TriggerSpec::new(
            "limits",
            ActionRef::Local {
                name: "limits.rec".into(),
            },
        );
        s.start_earliest = true;
        s.batch_window_ms = 3000;
        s.eval_interval_ms = 100_000;
        s
    };
    let mut rejected = Vec::new();
    for (records, bytes) in [
        (HARD_MAX_RECORDS + 1, HARD_MAX_BYTES),
        (HARD_MAX_RECORDS, HARD_MAX_BYTES + 1),
    ] {
        let mut s = base.clone();
        s.batch_max_records = records;
        s.batch_max_bytes = bytes;
        rejected.push(matches!(
            engine.register(&alice, s),
            Err(TriggerError::LimitExceeded(_))
        ));
    }

    // small records to hit the count bound, large ones to hit the byte bound
    let small = 25_000u64;
    for i in 0..small {
        cluster.append(
            &alice,
            "limits",
            Some(0),
            b"",
            format!("{{\"i\":{i}}}").as_bytes(),
            Acks::Leader,
        )?;
    }
    let big_value = format!("\"{}\"", "x".repeat(200_000));
    let big = 80u64;
    for _ in 0..big {
        cluster.append(
            &alice,
            "limits",
            Some(0),
            b"",
            big_value.as_bytes(),
            Acks::Leader,
        )?;
    }
    let mut s = base.clone();
    s.batch_max_records = HARD_MAX_RECORDS;
    s.batch_max_bytes = HARD_MAX_BYTES;
    let id = engine.register(&alice, s)?;
    let update = TriggerUpdate {
        batch_max_records: Some(HARD_MAX_RECORDS + 1),
        ..TriggerUpdate::default()
    };
    rejected.push(matches!(
        engine.update(&alice, &id, &update),
        Err(TriggerError::LimitExceeded(_))
    ));
    let drained = wait_until(Duration::from_secs(120), || {
        engine.compute_pressure(&id).unwrap_or(1) == 0
    });
    let stats = engine.stats(&id)?;
    engine.shutdown();
    let b = batches.lock().unwrap().clone();
    let max_records = b.iter().map(|x| x.0).max().unwrap_or(0);
    let max_bytes = b.iter().map(|x| x.1).max().unwrap_or(0);
    let delivered: u64 = b.iter().map(|x| x.0 as u64).sum();
    let within = b
        .iter()
        .all(|&(n, by)| n <= HARD_MAX_RECORDS as usize && by <= HARD_MAX_BYTES);
    let ok = rejected.iter().all(|r| *r)
        && drained
        && within
        && stats.hard_limit_violations == 0
        && delivered >= small + big
        && max_records == HARD_MAX_RECORDS as usize
        && max_bytes > HARD_MAX_BYTES - 200_100;
    Ok(Verdict::new(
        ok,
        format!(
            "over-limit registration/update rejected {rejected:?}; {} batches, largest {max_records} records and \
             {max_bytes} bytes (bounds {HARD_MAX_RECORDS} / {HARD_MAX_BYTES}); {} instrumented violations",
            b.len(),
            stats.hard_limit_violations
        ),
    ))
}

fn retention() -> anyhow::Result<Verdict> {
    const HOUR: i64 = 60 * 60 * 1000;
    const WEEK: i64 = 7 * 24 * HOUR;
    let dir = tempfile::tempdir()?;
    let t0 = 1_700_000_000_000;
    let clock = ManualClock::new(t0);
    let mut cfg = ClusterConfig::new(dir.path(), 2).with_clock(Arc::new(clock.clone()));
    cfg.heartbeat_interval = Duration::ZERO;
    let cluster = Cluster::open(cfg)?;
    cluster.create_topic(TopicSpec::new("ret", 2, 2), "alice")?;

    // one record per partition every 30 minutes for 9 days
    let mut stamps: BTreeMap<u32, Vec<i64>> = BTreeMap::new();
    for step in 0..(9 * 48) {
        for p in 0..2u32 {
            cluster.append(&Principal::Internal, "ret", Some(p), b"", b"{}", Acks::All)?;
            stamps.entry(p).or_default().push(clock.now_ms());
        }
        clock.advance(HOUR / 2);
        let _ = step;
    }
    let latest_before: Vec<u64> = (0..2)
        .map(|p| cluster.offset_range("ret", p).map(|r| r.1))
        .collect::<Result<_, _>>()?;

    let mut mismatches = 0;
    let mut monotone = true;
    let mut earliest = [0u64; 2];
    // checkpoints straddle record timestamps, including exact boundaries
    let checkpoints = [
        t0 + WEEK - 1,
        t0 + WEEK,
        t0 + WEEK + 1,
        t0 + WEEK + HOUR / 2,
        t0 + WEEK + 23 * HOUR,
        t0 + WEEK + 2 * 24 * HOUR - 1,
    ];
    for now in checkpoints {
        cluster.enforce_retention(now)?;
        let cutoff = now - WEEK;
        for p in 0..2u32 {
            let ts = &stamps[&p];
            let expect = ts.iter().position(|t| *t >= cutoff).unwrap_or(ts.len()) as u64;
            let (e, l) = cluster.offset_range("ret", p)?;
            let looked =
                cluster.lookup_offset(&Principal::Internal, "ret", p, OffsetTarget::Earliest)?;
            if e != expect || looked != expect || l != latest_before[p as usize] {
                mismatches += 1;
            }
            let recs = cluster.fetch(&Principal::Internal, "ret", p, e, 100_000, usize::MAX)?;
            let survivors_ok = recs.len() as u64 == l - e
                && recs.iter().all(|r| r.timestamp >= cutoff)
                && recs
                    .iter()
                    .enumerate()
                    .all(|(i, r)| r.offset == e + i as u64 && r.timestamp == ts[r.offset as usize]);
            if !survivors_ok {
                mismatches += 1;
            }
            monotone &= e >= earliest[p as usize];
            earliest[p as usize] = e;
        }
    }

    // the default retention keeps 6d23h and drops 7d1h
    let clock2 = ManualClock::new(t0);
    let dir2 = tempfile::tempdir()?;
    let mut cfg = ClusterConfig::new(dir2.path(), 1).with_clock(Arc::new(clock2.clone()));
    cfg.heartbeat_interval = Duration::ZERO;
    let c2 = Cluster::open(cfg)?;
    c2.create_topic(TopicSpec::new("default", 1, 1), "alice")?;
    c2.append(
        &Principal::Internal,
        "default",
        Some(0),
        b"",
        b"old",
        Acks::Leader,
    )?;
    clock2.advance(2 * HOUR);
    c2.append(
        &Principal::Internal,
        "default",
        Some(0),
        b"",
        b"young",
        Acks::Leader,
    )?;
    c2.enforce_retention(t0 + WEEK + HOUR)?;
    let left = c2.fetch(&Principal::Internal, "default", 0, 1, 10, usize::MAX)?;
    let seven_days =
        c2.offset_range("default", 0)? == (1, 2) && left.len() == 1 && left[0].value == b"young";

    Ok(Verdict::new(
        mismatches == 0 && monotone && seven_days,
        format!(
            "{} records over 9 days, {} checkpoints around the 7-day boundary: {mismatches} mismatches, earliest \
             offset {}; default retention keeps 6d23h and purges 7d1h: {seven_days}",
            stamps.values().map(Vec::len).sum::<usize>(),
            checkpoints.len(),
            if monotone { "monotone" } else { "NOT monotone" }
        ),
    ))
}

fn demos() -> anyhow::Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in SCENARIOS {
        let opts = DemoOptions {
            data_dir: Some(dir.path().join(name)),
            echo: false,
            ..DemoOptions::default()
        };
        let r = run_scenario(name, &opts)?;
        let failed: Vec<&str> = r
            .checks
            .iter()
            .filter(|c| !c.ok)
            .map(|c| c.name.as_str())
            .collect();
        ok &= r.passed;
        parts.push(if failed.is_empty() {
            format!(
                "{name} passed {} checks in {:.1}s",
                r.checks.len(),
                r.elapsed_ms as f64 / 1000.0
            )
        } else {
            format!("{name} failed {failed:?}")
        });
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(300) {
        ok = false;
    }
    parts.push(format!("total {:.1}s (budget 300s)", elapsed.as_secs_f64()));
    Ok(Verdict::new(ok, parts.join("; ")))
}
