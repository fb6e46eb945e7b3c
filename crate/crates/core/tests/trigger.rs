use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use octo::broker::{Acks, Cluster, ClusterConfig, Permission, Principal, TopicSpec};
use octo::pattern::parse_filter_criteria;
use octo::trigger::{
    ActionRef, Batch, CrashPoint, InvocationOutcome, TriggerEngine, TriggerError, TriggerSpec,
    TriggerUpdate,
};
use serde_json::json;

struct Env {
    cluster: Cluster,
    engine: TriggerEngine,
    _dir: tempfile::TempDir,
}

fn env(partitions: u32) -> Env {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ClusterConfig::new(dir.path(), 1);
    cfg.heartbeat_interval = Duration::ZERO;
    let cluster = Cluster::open(cfg).unwrap();
    cluster
        .create_topic(TopicSpec::new("t", partitions, 1), "alice")
        .unwrap();
    let engine = TriggerEngine::new(cluster.clone());
    engine.set_retry_base(Duration::from_millis(10));
    Env {
        cluster,
        engine,
        _dir: dir,
    }
}

type Seen = Arc<Mutex<Vec<Batch>>>;

fn recorder(engine: &TriggerEngine, name: &str) -> Seen {
    let seen: Seen = Arc::default();
    let s = Arc::clone(&seen);
    engine.register_local_action(name, move |b: &Batch| {
        s.lock().unwrap().push(b.clone());
        Ok(())
    });
    seen
}

fn alice() -> Principal {
    Principal::identity("alice")
}

fn produce(c: &Cluster, partition: u32, value: &str) {
    c.append(
        &alice(),
        "t",
        Some(partition),
        b"",
        value.as_bytes(),
        Acks::Leader,
    )
    .unwrap();
}

fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    f()
}

fn local_spec(name: &str) -> TriggerSpec {
    let mut s = TriggerSpec::new("t", ActionRef::Local { name: name.into() });
    s.eval_interval_ms = 100_000;
    s.batch_window_ms = 200;
    s
}

#[test]
fn batches_close_on_count_then_window() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    let mut spec = local_spec("rec");
    spec.start_earliest = true;
    for i in 0..250 {
        produce(&e.cluster, 0, &format!("{{\"i\":{i}}}"));
    }
    let id = e.engine.register(&alice(), spec).unwrap();
    assert!(wait_until(Duration::from_secs(10), || seen
        .lock()
        .unwrap()
        .len()
        == 3));
    let sizes: Vec<usize> = seen
        .lock()
        .unwrap()
        .iter()
        .map(|b| b.events.len())
        .collect();
    assert_eq!(sizes, vec![100, 100, 50]);
    let offsets: Vec<u64> = seen
        .lock()
        .unwrap()
        .iter()
        .flat_map(|b| b.events.iter().map(|e| e.offset))
        .collect();
    assert_eq!(offsets, (0..250).collect::<Vec<_>>());
    assert_eq!(e.engine.compute_pressure(&id).unwrap(), 0);
    let log = e.engine.invocations(&id).unwrap();
    assert_eq!(log.len(), 3);
    assert!(log
        .iter()
        .all(|r| r.outcome == InvocationOutcome::Success && r.attempts == 1));
}

#[test]
fn starts_at_latest_by_default() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    produce(&e.cluster, 0, "{\"old\":true}");
    e.engine.register(&alice(), local_spec("rec")).unwrap();
    produce(&e.cluster, 0, "{\"new\":true}");
    assert!(wait_until(Duration::from_secs(5), || !seen
        .lock()
        .unwrap()
        .is_empty()));
    std::thread::sleep(Duration::from_millis(300));
    let b = seen.lock().unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].events.len(), 1);
    assert_eq!(b[0].events[0].offset, 1);
}

#[test]
fn filters_skip_and_commit() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    let mut spec = local_spec("rec");
    spec.filters = parse_filter_criteria(&json!([
        {"Pattern": "{\"value\": {\"event_type\": [\"created\"]}}"},
        {"Pattern": {"value": {"event_type": ["moved"]}}}
    ]))
    .unwrap();
    let id = e.engine.register(&alice(), spec).unwrap();
    for (i, ty) in ["created", "deleted", "moved", "modified", "created"]
        .iter()
        .enumerate()
    {
        produce(
            &e.cluster,
            0,
            &json!({"event_type": ty, "n": i}).to_string(),
        );
    }
    produce(&e.cluster, 0, "not json");
    for i in 0..3 {
        produce(
            &e.cluster,
            0,
            &json!({"event_type": "deleted", "n": 10 + i}).to_string(),
        );
    }
    assert!(wait_until(Duration::from_secs(5), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    let got: Vec<u64> = seen
        .lock()
        .unwrap()
        .iter()
        .flat_map(|b| b.events.iter().map(|e| e.offset))
        .collect();
    assert_eq!(got, vec![0, 2, 4]);
    let st = e.engine.stats(&id).unwrap();
    assert_eq!(st.filtered_records, 5);
    assert_eq!(st.skipped_unstructured, 1);
    let committed = e
        .cluster
        .committed_offset(&Principal::Internal, &format!("trigger.{id}"), "t", 0)
        .unwrap();
    assert_eq!(committed, Some(9));
}

#[test]
fn unfiltered_trigger_delivers_raw_records() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    e.engine.register(&alice(), local_spec("rec")).unwrap();
    e.cluster
        .append(&alice(), "t", Some(0), b"k", &[0xde, 0xad], Acks::Leader)
        .unwrap();
    assert!(wait_until(Duration::from_secs(5), || !seen
        .lock()
        .unwrap()
        .is_empty()));
    let b = seen.lock().unwrap()[0].clone();
    assert_eq!(b.events[0].value, vec![0xde, 0xad]);
    assert_eq!(b.envelope()["events"][0]["structured"], false);
}

#[test]
fn failures_retry_then_dead_letter() {
    let e = env(2);
    let calls = Arc::new(AtomicU32::new(0));
    let c = Arc::clone(&calls);
    e.engine.register_local_action("boom", move |_: &Batch| {
        c.fetch_add(1, Ordering::SeqCst);
        Err("nope".into())
    });
    let id = e.engine.register(&alice(), local_spec("boom")).unwrap();
    produce(&e.cluster, 1, "{\"a\":1}");
    produce(&e.cluster, 1, "{\"a\":2}");
    assert!(wait_until(Duration::from_secs(5), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    let dlq = e.cluster.topic("t.dlq").unwrap();
    assert_eq!(dlq.partitions, 2);
    assert!(dlq.allows("alice", Permission::Read));
    let recs = e
        .cluster
        .fetch(&Principal::Internal, "t.dlq", 1, 0, 10, 1 << 20)
        .unwrap();
    let values: Vec<_> = recs.iter().map(|r| r.value.clone()).collect();
    assert_eq!(values, vec![b"{\"a\":1}".to_vec(), b"{\"a\":2}".to_vec()]);
    let log = e.engine.invocations(&id).unwrap();
    assert_eq!(log[0].outcome, InvocationOutcome::DeadLettered);
    assert_eq!(log[0].attempts, 3);
}

#[test]
fn transient_failure_recovers_on_retry() {
    let e = env(1);
    let calls = Arc::new(AtomicU32::new(0));
    let c = Arc::clone(&calls);
    e.engine.register_local_action("flaky", move |_: &Batch| {
        if c.fetch_add(1, Ordering::SeqCst) == 0 {
            Err("first attempt fails".into())
        } else {
            Ok(())
        }
    });
    let id = e.engine.register(&alice(), local_spec("flaky")).unwrap();
    produce(&e.cluster, 0, "{}");
    assert!(wait_until(Duration::from_secs(5), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    let log = e.engine.invocations(&id).unwrap();
    assert_eq!(
        (log[0].outcome, log[0].attempts),
        (InvocationOutcome::Success, 2)
    );
    assert!(e.cluster.offset_range("t.dlq", 0).unwrap().1 == 0);
}

#[test]
fn crash_before_commit_redelivers() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    let id = e.engine.register(&alice(), local_spec("rec")).unwrap();
    e.engine
        .inject_crash(&id, CrashPoint::BeforeCommit, 0)
        .unwrap();
    for i in 0..5 {
        produce(&e.cluster, 0, &format!("{i}"));
    }
    assert!(wait_until(Duration::from_secs(5), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    let offsets: Vec<u64> = seen
        .lock()
        .unwrap()
        .iter()
        .flat_map(|b| b.events.iter().map(|e| e.offset))
        .collect();
    let distinct: BTreeSet<u64> = offsets.iter().copied().collect();
    assert_eq!(distinct, (0..5).collect());
    assert!(
        offsets.len() > 5,
        "crashed batch was redelivered: {offsets:?}"
    );
    assert_eq!(e.engine.stats(&id).unwrap().crashes, 1);
}

#[test]
fn hard_limits_rejected_and_never_exceeded() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    let mut spec = local_spec("rec");
    spec.batch_max_records = 10_001;
    assert!(matches!(
        e.engine.register(&alice(), spec.clone()),
        Err(TriggerError::LimitExceeded(_))
    ));
    spec.batch_max_records = 10_000;
    spec.batch_max_bytes = 6_291_457;
    assert!(matches!(
        e.engine.register(&alice(), spec.clone()),
        Err(TriggerError::LimitExceeded(_))
    ));

    spec.batch_max_records = 7;
    spec.batch_max_bytes = 1000;
    spec.batch_window_ms = 50;
    let id = e.engine.register(&alice(), spec).unwrap();
    let big = "x".repeat(300);
    for _ in 0..20 {
        produce(&e.cluster, 0, &format!("\"{big}\""));
    }
    produce(&e.cluster, 0, &format!("\"{}\"", "y".repeat(1500)));
    for i in 0..30 {
        produce(&e.cluster, 0, &format!("{i}"));
    }
    assert!(wait_until(Duration::from_secs(10), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    for b in seen.lock().unwrap().iter() {
        assert!(b.events.len() <= 7);
        assert!(b.payload_bytes() <= 1000);
    }
    let st = e.engine.stats(&id).unwrap();
    assert_eq!(st.hard_limit_violations, 0);
    assert_eq!(st.dead_lettered_records, 1);
    let log = e.engine.invocations(&id).unwrap();
    assert_eq!(
        log.iter()
            .filter(|r| r.outcome == InvocationOutcome::Oversized)
            .count(),
        1
    );
}

#[test]
fn registration_errors() {
    let e = env(1);
    recorder(&e.engine, "rec");
    let mut spec = local_spec("rec");
    spec.topic = "missing".into();
    assert!(matches!(
        e.engine.register(&alice(), spec),
        Err(TriggerError::UnknownTopic(_))
    ));
    assert!(matches!(
        e.engine
            .register(&Principal::identity("mallory"), local_spec("rec")),
        Err(TriggerError::Unauthorized(_))
    ));
    assert!(matches!(
        e.engine.register(&alice(), local_spec("nobody")),
        Err(TriggerError::BadAction(_))
    ));
    assert!(matches!(
        e.engine.update(&alice(), "nope", &TriggerUpdate::default()),
        Err(TriggerError::UnknownTrigger(_))
    ));
    let id = e.engine.register(&alice(), local_spec("rec")).unwrap();
    assert!(matches!(
        e.engine.delete(&Principal::identity("mallory"), &id),
        Err(TriggerError::Unauthorized(_))
    ));
    let upd = TriggerUpdate {
        batch_max_records: Some(10_001),
        ..Default::default()
    };
    assert!(matches!(
        e.engine.update(&alice(), &id, &upd),
        Err(TriggerError::LimitExceeded(_))
    ));
}

#[test]
fn update_applies_at_batch_boundary() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    let id = e.engine.register(&alice(), local_spec("rec")).unwrap();
    produce(&e.cluster, 0, "{\"k\":\"a\"}");
    assert!(wait_until(Duration::from_secs(5), || seen
        .lock()
        .unwrap()
        .len()
        == 1));
    let upd: TriggerUpdate = serde_json::from_value(json!({
        "filters": [{"Pattern": "{\"value\": {\"k\": [\"b\"]}}"}]
    }))
    .unwrap();
    e.engine.update(&alice(), &id, &upd).unwrap();
    produce(&e.cluster, 0, "{\"k\":\"a\"}");
    produce(&e.cluster, 0, "{\"k\":\"b\"}");
    assert!(wait_until(Duration::from_secs(5), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    std::thread::sleep(Duration::from_millis(100));
    let offsets: Vec<u64> = seen
        .lock()
        .unwrap()
        .iter()
        .flat_map(|b| b.events.iter().map(|e| e.offset))
        .collect();
    assert_eq!(offsets, vec![0, 2]);
}

#[test]
fn delete_keeps_offsets_and_reregister_starts_fresh() {
    let e = env(1);
    let seen = recorder(&e.engine, "rec");
    let id = e.engine.register(&alice(), local_spec("rec")).unwrap();
    produce(&e.cluster, 0, "1");
    assert!(wait_until(Duration::from_secs(5), || seen
        .lock()
        .unwrap()
        .len()
        == 1));
    e.engine.delete(&alice(), &id).unwrap();
    produce(&e.cluster, 0, "2");
    std::thread::sleep(Duration::from_millis(300));
    assert_eq!(seen.lock().unwrap().len(), 1);
    let group = format!("trigger.{id}");
    assert_eq!(
        e.cluster
            .committed_offset(&Principal::Internal, &group, "t", 0)
            .unwrap(),
        Some(1)
    );
    assert!(e.cluster.topic("t.dlq").is_some());
    assert!(e.engine.list(&alice()).is_empty());

    let id2 = e.engine.register(&alice(), local_spec("rec")).unwrap();
    assert_ne!(id, id2);
    produce(&e.cluster, 0, "3");
    assert!(wait_until(Duration::from_secs(5), || seen
        .lock()
        .unwrap()
        .len()
        == 2));
    assert_eq!(seen.lock().unwrap()[1].events[0].offset, 2);
}

#[test]
fn autoscaler_ramps_and_drains() {
    let e = env(16);
    let gate = Arc::new(Mutex::new(()));
    let hold = gate.lock().unwrap();
    let g = Arc::clone(&gate);
    e.engine.register_local_action("gated", move |_: &Batch| {
        drop(g.lock().unwrap());
        Ok(())
    });
    let mut spec = local_spec("gated");
    spec.target_lag_per_worker = 1;
    let id = e.engine.register(&alice(), spec).unwrap();
    for p in 0..16 {
        for _ in 0..4 {
            produce(&e.cluster, p, "{}");
        }
    }
    assert_eq!(e.engine.compute_pressure(&id).unwrap(), 64);
    assert_eq!(e.engine.evaluate_now(&id).unwrap(), 4);
    assert_eq!(e.engine.evaluate_now(&id).unwrap(), 16);
    assert_eq!(e.engine.evaluate_now(&id).unwrap(), 16);
    drop(hold);
    assert!(wait_until(Duration::from_secs(10), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    assert_eq!(e.engine.evaluate_now(&id).unwrap(), 1);
    let conc: Vec<u32> = e
        .engine
        .timeline(&id)
        .unwrap()
        .iter()
        .map(|p| p.concurrency)
        .collect();
    assert_eq!(conc, vec![1, 4, 16, 16, 1]);
    let st = e.engine.stats(&id).unwrap();
    assert!(st.max_active_invocations <= 16);
    assert_eq!(st.delivered_records, 64);
}

#[test]
fn partitions_are_never_shared() {
    let e = env(4);
    let active: Arc<Mutex<HashMap<u32, u32>>> = Arc::default();
    let violations = Arc::new(AtomicU32::new(0));
    let (a, v) = (Arc::clone(&active), Arc::clone(&violations));
    e.engine.register_local_action("excl", move |b: &Batch| {
        {
            let mut m = a.lock().unwrap();
            let n = m.entry(b.partition).or_default();
            *n += 1;
            if *n > 1 {
                v.fetch_add(1, Ordering::SeqCst);
            }
        }
        std::thread::sleep(Duration::from_millis(5));
        *a.lock().unwrap().get_mut(&b.partition).unwrap() -= 1;
        Ok(())
    });
    let mut spec = local_spec("excl");
    spec.target_lag_per_worker = 1;
    spec.eval_interval_ms = 100;
    spec.batch_max_records = 3;
    spec.batch_window_ms = 0;
    let id = e.engine.register(&alice(), spec).unwrap();
    for i in 0..400u32 {
        produce(&e.cluster, i % 4, "{}");
    }
    assert!(wait_until(Duration::from_secs(20), || e
        .engine
        .compute_pressure(&id)
        .unwrap()
        == 0));
    assert_eq!(violations.load(Ordering::SeqCst), 0);
    let st = e.engine.stats(&id).unwrap();
    assert_eq!(st.delivered_records, 400);
    assert!(st.max_active_invocations <= 4);
}

#[test]
fn webhook_delivery_with_idempotency_header() {
    let e = env(1);
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let port = server.server_addr().to_ip().unwrap().port();
    let got: Arc<Mutex<Vec<(String, serde_json::Value)>>> = Arc::default();
    let g = Arc::clone(&got);
    let count = Arc::new(AtomicU32::new(0));
    let cnt = Arc::clone(&count);
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let header = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("X-Octo-Delivery"))
                .map(|h| h.value.to_string())
                .unwrap_or_default();
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            // the first delivery fails so the retry is visible
            let code = if cnt.fetch_add(1, Ordering::SeqCst) == 0 {
                503
            } else {
                200
            };
            g.lock()
                .unwrap()
                .push((header, serde_json::from_str(&body).unwrap()));
            req.respond(tiny_http::Response::empty(code)).unwrap();
        }
    });
    let mut spec = TriggerSpec::new(
        "t",
        ActionRef::Webhook {
            url: format!("http://127.0.0.1:{port}/hook"),
            headers: [("X-Tenant".to_string(), "alice".to_string())].into(),
            timeout_ms: 2000,
        },
    );
    spec.eval_interval_ms = 100_000;
    let id = e.engine.register(&alice(), spec).unwrap();
    e.cluster
        .append(&alice(), "t", Some(0), b"key", b"{\"x\":1}", Acks::Leader)
        .unwrap();
    assert!(wait_until(Duration::from_secs(10), || got
        .lock()
        .unwrap()
        .len()
        == 2));
    let got = got.lock().unwrap();
    assert_eq!(got[0].0, format!("{id}:0:0"));
    assert_eq!(got[0].0, got[1].0);
    let body = &got[1].1;
    assert_eq!(body["trigger_id"], id.as_str());
    assert_eq!(body["topic"], "t");
    assert_eq!(body["attempt"], 2);
    assert_eq!(body["events"][0]["value"], json!({"x": 1}));
    assert_eq!(body["events"][0]["key_b64"], "a2V5");
}

#[test]
fn persisted_triggers_resume() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ClusterConfig::new(dir.path().join("data"), 1);
    cfg.heartbeat_interval = Duration::ZERO;
    let cluster = Cluster::open(cfg).unwrap();
    cluster
        .create_topic(TopicSpec::new("t", 1, 1), "alice")
        .unwrap();
    let store = dir.path().join("triggers.json");
    let engine = TriggerEngine::with_store(cluster.clone(), &store);
    recorder(&engine, "rec");
    let id = engine.register(&alice(), local_spec("rec")).unwrap();
    engine.shutdown();
    produce(&cluster, 0, "{}");

    let again = TriggerEngine::with_store(cluster.clone(), &store);
    let seen = recorder(&again, "rec");
    assert_eq!(again.resume().unwrap(), 1);
    assert!(wait_until(Duration::from_secs(5), || seen
        .lock()
        .unwrap()
        .len()
        == 1));
    assert_eq!(seen.lock().unwrap()[0].trigger_id, id);
}
