//! Benchmark harness: producer and consumer fleets against an in-process
//! fabric, trigger scaling workloads, and JSON/CSV reports.

pub mod analysis;
mod spec;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier, OnceLock};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use serde::Serialize;
use serde_json::{json, Value};

pub use analysis::{
    analyze_round, combine, nearest_rank, throughput, AgentLog, BenchReport, Role, RoundReport,
    Sample,
};
pub use spec::{
    ClusterSection, ConsumersSection, ExperimentKind, ExperimentSpec, MultitenancySection,
    ProducersSection, TopicsSection, TriggerSection,
};

use crate::broker::{Acks, DataKey, Principal, TopicSpec};
use crate::client::{Consumer, ConsumerConfig, Producer, ProducerConfig, StartPosition};
use crate::fabric::{Fabric, FabricConfig};
use crate::trigger::{rescale, ActionRef, Batch, TimelinePoint, TriggerSpec};

pub const BENCH_IDENTITY: &str = "bench";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("topic {0} has no records to consume")]
    EmptyTopic(String),
    #[error("agent failure: {0}")]
    AgentFailure(String),
    #[error("trend violation: {0}")]
    TrendViolation(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Setup(#[from] anyhow::Error),
}

impl BenchError {
    pub fn code(&self) -> &'static str {
        match self {
            BenchError::EmptyTopic(_) => "EMPTY_TOPIC",
            BenchError::AgentFailure(_) => "AGENT_FAILURE",
            BenchError::TrendViolation(_) => "TREND_VIOLATION",
            BenchError::Invalid(_) => "INVALID",
            BenchError::Setup(_) => "SETUP",
        }
    }
}

fn setup<E: std::fmt::Display>(e: E) -> BenchError {
    BenchError::Setup(anyhow::anyhow!("{e}"))
}

/// One assertion on the results. Only gating checks decide the verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub gating: bool,
    pub detail: String,
}

impl Check {
    fn gate(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ok,
            gating: true,
            detail: detail.into(),
        }
    }

    fn info(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            gating: false,
            ..Self::gate(name, ok, detail)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub name: String,
    pub experiment: ExperimentKind,
    pub checks: Vec<Check>,
    pub report: Value,
    /// (file suffix, contents)
    #[serde(skip)]
    pub csv: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok || !c.gating)
    }

    /// `TREND_VIOLATION` naming every failed gating check.
    pub fn verdict(&self) -> Result<(), BenchError> {
        let failed: Vec<&str> = self
            .checks
            .iter()
            .filter(|c| c.gating && !c.ok)
            .map(|c| c.name.as_str())
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(BenchError::TrendViolation(failed.join("; ")))
        }
    }

    /// Writes `<name>.json` and `<name>.<suffix>.csv` files into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let json_path = dir.join(format!("{}.json", self.name));
        let body = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&json_path, body + "\n")?;
        out.push(json_path);
        for (suffix, text) in &self.csv {
            let p = dir.join(format!("{}.{suffix}.csv", self.name));
            std::fs::write(&p, text)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// An in-process fabric plus a data key for the bench identity.
pub struct Harness {
    fabric: Fabric,
    key_id: String,
    secret: Vec<u8>,
    _tmp: Option<tempfile::TempDir>,
}

impl std::fmt::Debug for Harness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Harness")
            .field("fabric", &self.fabric)
            .finish()
    }
}

impl Harness {
    pub fn start(cluster: &ClusterSection, data_dir: Option<&Path>) -> Result<Self, BenchError> {
        let (dir, tmp) = match data_dir {
            Some(d) => (d.to_path_buf(), None),
            None => {
                let t = tempfile::Builder::new()
                    .prefix("octo-bench")
                    .tempdir()
                    .map_err(setup)?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let mut cfg = FabricConfig::local(dir, cluster.brokers);
        cfg.heartbeat_ms = 0;
        cfg.retention_check_ms = 0;
        cfg.broker_ingress_bytes_per_sec = cluster.broker_ingress_bytes_per_sec;
        let fabric = Fabric::start(cfg)?;
        let mut secret = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut secret);
        let key_id = format!("BENCH{}", uuid::Uuid::new_v4().simple());
        fabric
            .cluster()
            .register_key(DataKey {
                key_id: key_id.clone(),
                identity_id: BENCH_IDENTITY.into(),
                secret,
                created_at: fabric.cluster().clock().now_ms(),
            })
            .map_err(setup)?;
        fabric.engine().set_retry_base(Duration::from_millis(20));
        Ok(Self {
            fabric,
            key_id,
            secret: secret.to_vec(),
            _tmp: tmp,
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn key(&self) -> (&str, &[u8]) {
        (&self.key_id, &self.secret)
    }

    pub fn create_topic(&self, name: &str, partitions: u32, rf: u32) -> Result<(), BenchError> {
        self.fabric
            .cluster()
            .create_topic(TopicSpec::new(name, partitions, rf), BENCH_IDENTITY)
            .map_err(setup)?;
        Ok(())
    }

    /// Records readable on `topic` (sum of high watermark minus log start).
    pub fn topic_records(&self, topic: &str) -> Result<u64, BenchError> {
        let c = self.fabric.cluster();
        let parts = c
            .topic(topic)
            .ok_or_else(|| BenchError::Invalid(format!("unknown topic {topic}")))?
            .partitions;
        let mut n = 0;
        for p in 0..parts {
            let info = c.partition_info(topic, p).map_err(setup)?;
            n += info.high_watermark.saturating_sub(info.log_start);
        }
        Ok(n)
    }

    fn wait_for_records(
        &self,
        topics: &[String],
        expected: u64,
        timeout: Duration,
    ) -> Result<(), BenchError> {
        let deadline = Instant::now() + timeout;
        loop {
            let mut have = 0;
            for t in topics {
                have += self.topic_records(t)?;
            }
            if have >= expected {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return Err(BenchError::AgentFailure(format!(
                    "only {have} of {expected} records became readable"
                )));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// Runs `p.count` producer agents released together by a barrier. Agent
    /// `a` sends its `i`-th event to `topics[(a + i) % topics.len()]`.
    pub fn produce_round(
        &self,
        topics: &[String],
        p: &ProducersSection,
        acks: Acks,
        seed: u64,
    ) -> Result<Vec<AgentLog>, BenchError> {
        if topics.is_empty() {
            return Err(BenchError::Invalid("no topics".into()));
        }
        let brokers = self.fabric.broker_addrs();
        let agents = p.count as usize;
        let gate = StartGate::new(agents);
        let mut handles = Vec::with_capacity(agents);
        for a in 0..agents {
            let producer = Producer::new(
                brokers.clone(),
                &self.key_id,
                &self.secret,
                ProducerConfig {
                    acks,
                    retries: 5,
                    ..ProducerConfig::default()
                },
            )
            .map_err(setup)?;
            let (gate, topics) = (gate.clone(), topics.to_vec());
            let (size, n, duration) = (p.event_size_bytes, p.events_per_producer, p.duration_secs);
            let agent_seed = seed.wrapping_mul(1_000_003).wrapping_add(a as u64);
            handles.push(std::thread::spawn(move || {
                let mut rng = rand::rngs::StdRng::seed_from_u64(agent_seed);
                let mut payload = vec![0u8; size];
                rng.fill_bytes(&mut payload);
                let epoch = gate.wait();
                let mut log = AgentLog {
                    agent: format!("producer-{a}"),
                    role: Role::Producer,
                    samples: Vec::new(),
                    failures: 0,
                    errors: Vec::new(),
                };
                let until = duration.map(|s| Instant::now() + Duration::from_secs_f64(s));
                let mut pending = Vec::new();
                let mut i = 0u64;
                loop {
                    match until {
                        Some(u) if Instant::now() >= u => break,
                        None if i >= n => break,
                        _ => {}
                    }
                    let topic = &topics[(a + i as usize) % topics.len()];
                    let stamp = i.to_le_bytes();
                    let k = stamp.len().min(payload.len());
                    payload[..k].copy_from_slice(&stamp[..k]);
                    match producer.send(topic, b"", &payload) {
                        Ok(d) => pending.push(d),
                        Err(e) => {
                            log.failures += 1;
                            log.errors.push(e.to_string());
                        }
                    }
                    i += 1;
                }
                for d in pending {
                    match d.wait_timeout(Duration::from_secs(120)) {
                        Some(r) if r.is_ok() => log.samples.push(Sample {
                            start_us: micros_since(epoch, r.enqueued_at),
                            end_us: micros_since(epoch, r.done_at),
                        }),
                        Some(r) => {
                            log.failures += 1;
                            if log.errors.len() < 10 {
                                log.errors.push(format!("{:?}", r.outcome));
                            }
                        }
                        None => {
                            log.failures += 1;
                            log.errors.push("delivery report timed out".into());
                        }
                    }
                }
                log
            }));
        }
        gate.release();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| BenchError::AgentFailure("producer thread panicked".into()))
            })
            .collect()
    }

    /// Reads every record currently on `topics` from the first offset with
    /// `consumers` agents; partitions are dealt round-robin.
    pub fn consume_round(
        &self,
        topics: &[String],
        consumers: u32,
    ) -> Result<(Vec<AgentLog>, u64), BenchError> {
        let c = self.fabric.cluster();
        let mut work: Vec<(String, u32, u64, u64)> = Vec::new();
        for t in topics {
            let parts = c
                .topic(t)
                .ok_or_else(|| BenchError::Invalid(format!("unknown topic {t}")))?
                .partitions;
            for p in 0..parts {
                let info = c.partition_info(t, p).map_err(setup)?;
                if info.high_watermark > info.log_start {
                    work.push((t.clone(), p, info.log_start, info.high_watermark));
                }
            }
        }
        if work.is_empty() {
            return Err(BenchError::EmptyTopic(topics.join(",")));
        }
        let agents = (consumers.max(1) as usize).min(work.len());
        let mut assigned: Vec<Vec<(String, u32, u64, u64)>> = vec![Vec::new(); agents];
        for (i, w) in work.into_iter().enumerate() {
            assigned[i % agents].push(w);
        }
        let brokers = self.fabric.broker_addrs();
        let gate = StartGate::new(agents);
        let unique = Arc::new(AtomicU64::new(0));
        let mut handles = Vec::new();
        for (a, parts) in assigned.into_iter().enumerate() {
            // one consumer per topic, covering this agent's partitions of it
            let mut by_topic: Vec<(String, Vec<u32>, u64)> = Vec::new();
            for (t, p, start, end) in &parts {
                match by_topic.iter_mut().find(|(bt, _, _)| bt == t) {
                    Some(e) => {
                        e.1.push(*p);
                        e.2 += end - start;
                    }
                    None => by_topic.push((t.clone(), vec![*p], end - start)),
                }
            }
            let mut readers = Vec::new();
            for (t, ps, expected) in by_topic {
                let cfg = ConsumerConfig {
                    group_id: None,
                    start: StartPosition::Earliest,
                    auto_commit_interval_ms: 0,
                    max_poll_records: 2000,
                    ..ConsumerConfig::default()
                };
                let cons = Consumer::new(brokers.clone(), &self.key_id, &self.secret, &t, ps, cfg)
                    .map_err(setup)?;
                readers.push((t, cons, expected));
            }
            let (gate, unique) = (gate.clone(), Arc::clone(&unique));
            handles.push(std::thread::spawn(move || {
                let epoch = gate.wait();
                let mut log = AgentLog {
                    agent: format!("consumer-{a}"),
                    role: Role::Consumer,
                    samples: Vec::new(),
                    failures: 0,
                    errors: Vec::new(),
                };
                let mut seen: HashSet<(usize, u32, u64)> = HashSet::new();
                let deadline = Instant::now() + Duration::from_secs(300);
                let mut remaining: Vec<u64> = readers.iter().map(|r| r.2).collect();
                while remaining.iter().any(|&r| r > 0) {
                    if Instant::now() >= deadline {
                        log.failures += 1;
                        log.errors
                            .push(format!("timed out with {remaining:?} records left"));
                        break;
                    }
                    for (i, (_, cons, _)) in readers.iter_mut().enumerate() {
                        if remaining[i] == 0 {
                            continue;
                        }
                        let issued = micros_since(epoch, Instant::now());
                        match cons.poll(2000, Duration::from_millis(200)) {
                            Ok(recs) => {
                                let at = micros_since(epoch, Instant::now());
                                for r in recs {
                                    if seen.insert((i, r.partition, r.record.offset)) {
                                        remaining[i] = remaining[i].saturating_sub(1);
                                    }
                                    log.samples.push(Sample {
                                        start_us: issued,
                                        end_us: at,
                                    });
                                }
                            }
                            Err(e) => {
                                log.failures += 1;
                                log.errors.push(e.to_string());
                                if log.failures > 20 {
                                    return log;
                                }
                            }
                        }
                    }
                }
                unique.fetch_add(seen.len() as u64, Ordering::Relaxed);
                log
            }));
        }
        gate.release();
        let logs = handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| BenchError::AgentFailure("consumer thread panicked".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((logs, unique.load(Ordering::Relaxed)))
    }
}

/// Start barrier carrying the epoch all agents of a round measure from.
#[derive(Clone)]
struct StartGate {
    barrier: Arc<Barrier>,
    epoch: Arc<OnceLock<Instant>>,
}

impl StartGate {
    fn new(agents: usize) -> Self {
        Self {
            barrier: Arc::new(Barrier::new(agents + 1)),
            epoch: Arc::new(OnceLock::new()),
        }
    }

    /// Orchestrator side: fixes the epoch and releases the agents.
    fn release(&self) {
        let _ = self.epoch.set(Instant::now());
        self.barrier.wait();
    }

    /// Agent side: blocks until released and returns the epoch.
    fn wait(&self) -> Instant {
        self.barrier.wait();
        *self.epoch.get().expect("epoch set before release")
    }
}

fn micros_since(epoch: Instant, t: Instant) -> u64 {
    t.saturating_duration_since(epoch).as_micros() as u64
}

fn failed_round(logs: &[AgentLog]) -> Option<String> {
    let bad: Vec<String> = logs
        .iter()
        .filter(|l| l.failures > 0)
        .map(|l| {
            format!(
                "{}: {} failures ({})",
                l.agent,
                l.failures,
                l.errors.join(", ")
            )
        })
        .collect();
    (!bad.is_empty()).then(|| bad.join("; "))
}

/// Rounds may be voided by agent failures; a couple of replacements are
/// attempted before giving up.
const MAX_EXTRA_ROUNDS: u32 = 2;

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, BenchError> {
    spec.validate()
        .map_err(|e| BenchError::Invalid(e.to_string()))?;
    let h = Harness::start(&spec.cluster, spec.data_dir.as_deref())?;
    let out = match spec.experiment {
        ExperimentKind::Throughput => run_throughput(&h, spec),
        ExperimentKind::AcksSweep => run_acks_sweep(&h, spec),
        ExperimentKind::ConsumerVsProducer => run_consumer_vs_producer(&h, spec),
        ExperimentKind::TriggerScaling => run_trigger_scaling(&h, spec),
        ExperimentKind::PartitionScaling => run_partition_scaling(&h, spec),
        ExperimentKind::Multitenancy => run_multitenancy_sweep(&h, spec),
    };
    drop(h);
    out
}

fn topic_names(prefix: &str, count: u32) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}.t{i}")).collect()
}

fn create_topics(h: &Harness, names: &[String], t: &TopicsSection) -> Result<(), BenchError> {
    for n in names {
        h.create_topic(n, t.partitions, t.replication_factor)?;
    }
    Ok(())
}

const ROUND_CSV_HEADER: &str =
    "label,round,n,t1_ms,t2_ms,throughput,latency_median_ms,latency_p99_ms,failures\n";

fn round_csv(out: &mut String, label: &str, r: &RoundReport) {
    let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_default();
    out.push_str(&format!(
        "{label},{},{},{:.3},{:.3},{:.1},{},{},{}\n",
        r.round,
        r.n,
        r.t1_ms,
        r.t2_ms,
        r.throughput,
        f(r.latency_median_ms),
        f(r.latency_p99_ms),
        r.failures
    ));
}

pub fn run_throughput(h: &Harness, spec: &ExperimentSpec) -> Result<ExperimentOutput, BenchError> {
    let mut prod = Vec::new();
    let mut cons = Vec::new();
    let mut checks = Vec::new();
    let mut csv = String::from(ROUND_CSV_HEADER);
    let mut attempt = 0;
    while (prod.len() as u32) < spec.rounds {
        if attempt >= spec.rounds + MAX_EXTRA_ROUNDS {
            return Err(BenchError::AgentFailure("too many voided rounds".into()));
        }
        let topics = topic_names(
            &format!("bench.{}.r{attempt}", spec.name),
            spec.topics.count,
        );
        attempt += 1;
        create_topics(h, &topics, &spec.topics)?;
        let logs = h.produce_round(
            &topics,
            &spec.producers,
            spec.producers.acks,
            spec.seed + attempt as u64,
        )?;
        if let Some(why) = failed_round(&logs) {
            log::warn!("round voided: {why}");
            continue;
        }
        let round = prod.len() as u32;
        let r = analyze_round(round, &logs)
            .ok_or_else(|| BenchError::AgentFailure("empty round".into()))?;
        round_csv(&mut csv, "produce", &r);
        if spec.consumers.count > 0 {
            h.wait_for_records(&topics, r.n, Duration::from_secs(60))?;
            let (clogs, unique) = h.consume_round(&topics, spec.consumers.count)?;
            let cr = analyze_round(round, &clogs)
                .ok_or_else(|| BenchError::AgentFailure("empty round".into()))?;
            checks.push(Check::gate(
                format!("round {round}: consumed unique offsets = produced"),
                unique == r.n,
                format!("{unique} vs {}", r.n),
            ));
            round_csv(&mut csv, "consume", &cr);
            cons.push(cr);
        }
        prod.push(r);
    }
    let report = json!({
        "spec": spec,
        "producer": combine("produce", prod),
        "consumer": (!cons.is_empty()).then(|| combine("consume", cons)),
    });
    Ok(ExperimentOutput {
        name: spec.name.clone(),
        experiment: spec.experiment,
        checks,
        report,
        csv: vec![("rounds".into(), csv)],
    })
}

/// Discarded pass so the first measured round does not pay for connection
/// setup and first-touch allocations.
fn warm_up(h: &Harness, spec: &ExperimentSpec) -> Result<(), BenchError> {
    let topics = topic_names(&format!("bench.{}.warmup", spec.name), spec.topics.count);
    create_topics(h, &topics, &spec.topics)?;
    let mut sent = 0;
    for acks in SWEEP {
        let logs = h.produce_round(&topics, &spec.producers, acks, spec.seed)?;
        sent += logs.iter().map(|l| l.samples.len() as u64).sum::<u64>();
    }
    h.wait_for_records(&topics, sent, Duration::from_secs(60))
}

const SWEEP: [Acks; 3] = [Acks::None, Acks::Leader, Acks::All];

/// Same workload at acks 0, 1 and ALL, interleaved within each round.
pub fn run_acks_sweep(h: &Harness, spec: &ExperimentSpec) -> Result<ExperimentOutput, BenchError> {
    let mut per_acks: [Vec<RoundReport>; 3] = Default::default();
    let mut csv = String::from(ROUND_CSV_HEADER);
    warm_up(h, spec)?;
    let mut attempt = 0;
    while (per_acks[0].len() as u32) < spec.rounds {
        if attempt >= spec.rounds + MAX_EXTRA_ROUNDS {
            return Err(BenchError::AgentFailure("too many voided rounds".into()));
        }
        let round = per_acks[0].len() as u32;
        let mut results = Vec::new();
        let mut voided = false;
        for acks in SWEEP {
            let topics = topic_names(
                &format!("bench.{}.r{attempt}.acks{acks}", spec.name),
                spec.topics.count,
            );
            create_topics(h, &topics, &spec.topics)?;
            let logs =
                h.produce_round(&topics, &spec.producers, acks, spec.seed + attempt as u64)?;
            if let Some(why) = failed_round(&logs) {
                log::warn!("round voided (acks={acks}): {why}");
                voided = true;
                break;
            }
            let r = analyze_round(round, &logs)
                .ok_or_else(|| BenchError::AgentFailure("empty round".into()))?;
            // let acks=0 traffic land before the next measurement
            h.wait_for_records(&topics, r.n, Duration::from_secs(60))?;
            results.push(r);
        }
        attempt += 1;
        if voided {
            continue;
        }
        for (i, r) in results.into_iter().enumerate() {
            round_csv(&mut csv, &format!("acks={}", SWEEP[i]), &r);
            per_acks[i].push(r);
        }
    }
    let reports: Vec<BenchReport> = per_acks
        .into_iter()
        .zip(SWEEP)
        .map(|(rounds, acks)| combine(&format!("acks={acks}"), rounds))
        .collect();
    let checks = acks_checks(&reports, spec.topics.replication_factor);
    Ok(ExperimentOutput {
        name: spec.name.clone(),
        experiment: spec.experiment,
        checks,
        report: json!({ "spec": spec, "sweep": reports }),
        csv: vec![("rounds".into(), csv)],
    })
}

/// Trend checks over reports for acks 0, 1 and ALL, in that order.
pub fn acks_checks(reports: &[BenchReport], replication_factor: u32) -> Vec<Check> {
    let mut checks = Vec::new();
    let (r0, r1, ra) = (&reports[0], &reports[1], &reports[2]);
    for i in 0..r0.rounds.len() {
        let (t0, t1, ta) = (
            r0.rounds[i].throughput,
            r1.rounds[i].throughput,
            ra.rounds[i].throughput,
        );
        let detail = format!("T(0)={t0:.0} T(1)={t1:.0} T(ALL)={ta:.0}");
        if replication_factor >= 2 {
            checks.push(Check::gate(
                format!("round {i}: T(0) > T(1) > T(ALL)"),
                t0 > t1 && t1 > ta,
                detail,
            ));
        } else {
            // with one replica the ISR is the leader alone
            let rel = (t1 - ta).abs() / ta.max(f64::MIN_POSITIVE);
            checks.push(Check::gate(
                format!("round {i}: T(1) ~ T(ALL) within 10%"),
                rel <= 0.10,
                format!("{detail} diff={:.1}%", rel * 100.0),
            ));
        }
    }
    let (m0, ma) = (
        r0.latency_median_ms.unwrap_or(0.0),
        ra.latency_median_ms.unwrap_or(0.0),
    );
    let latency = format!("median latency ALL={ma:.3} ms vs 0={m0:.3} ms");
    if replication_factor >= 2 {
        checks.push(Check::gate(
            "median latency(ALL) > median latency(0)",
            ma > m0,
            latency,
        ));
    } else {
        checks.push(Check::info(
            "median latency(ALL) > median latency(0)",
            ma > m0,
            latency,
        ));
    }
    checks
}

/// Produce T, then consume T over the same records, per round.
pub fn run_consumer_vs_producer(
    h: &Harness,
    spec: &ExperimentSpec,
) -> Result<ExperimentOutput, BenchError> {
    let mut prod = Vec::new();
    let mut cons = Vec::new();
    let mut checks = Vec::new();
    let mut csv = String::from(ROUND_CSV_HEADER);
    let mut attempt = 0;
    while (prod.len() as u32) < spec.rounds {
        if attempt >= spec.rounds + MAX_EXTRA_ROUNDS {
            return Err(BenchError::AgentFailure("too many voided rounds".into()));
        }
        let topics = topic_names(
            &format!("bench.{}.r{attempt}", spec.name),
            spec.topics.count,
        );
        attempt += 1;
        create_topics(h, &topics, &spec.topics)?;
        let logs = h.produce_round(
            &topics,
            &spec.producers,
            spec.producers.acks,
            spec.seed + attempt as u64,
        )?;
        if let Some(why) = failed_round(&logs) {
            log::warn!("round voided: {why}");
            continue;
        }
        let round = prod.len() as u32;
        let pr = analyze_round(round, &logs)
            .ok_or_else(|| BenchError::AgentFailure("empty round".into()))?;
        h.wait_for_records(&topics, pr.n, Duration::from_secs(60))?;
        let (clogs, unique) = h.consume_round(&topics, spec.consumers.count.max(1))?;
        if let Some(why) = failed_round(&clogs) {
            log::warn!("round voided: {why}");
            continue;
        }
        let cr = analyze_round(round, &clogs)
            .ok_or_else(|| BenchError::AgentFailure("empty round".into()))?;
        checks.push(Check::gate(
            format!("round {round}: consume T >= produce T"),
            cr.throughput >= pr.throughput,
            format!(
                "consume {:.0}/s vs produce {:.0}/s (ratio {:.2})",
                cr.throughput,
                pr.throughput,
                cr.throughput / pr.throughput
            ),
        ));
        checks.push(Check::gate(
            format!("round {round}: consumed unique offsets = produced"),
            unique == pr.n,
            format!("{unique} vs {}", pr.n),
        ));
        round_csv(&mut csv, "produce", &pr);
        round_csv(&mut csv, "consume", &cr);
        prod.push(pr);
        cons.push(cr);
    }
    let (p, c) = (combine("produce", prod), combine("consume", cons));
    let ratio = c.throughput / p.throughput;
    Ok(ExperimentOutput {
        name: spec.name.clone(),
        experiment: spec.experiment,
        checks,
        report: json!({ "spec": spec, "producer": p, "consumer": c, "ratio": ratio }),
        csv: vec![("rounds".into(), csv)],
    })
}

fn produce_fixed(h: &Harness, topic: &str, events: u64, size: usize) -> Result<(), BenchError> {
    let p = ProducersSection {
        count: 1,
        event_size_bytes: size,
        acks: Acks::Leader,
        events_per_producer: events,
        duration_secs: None,
    };
    let logs = h.produce_round(&[topic.to_string()], &p, Acks::Leader, 0)?;
    if let Some(why) = failed_round(&logs) {
        return Err(BenchError::AgentFailure(why));
    }
    h.wait_for_records(&[topic.to_string()], events, Duration::from_secs(60))
}

/// Waits for zero lag; returns the time since `start`.
fn wait_drained(
    h: &Harness,
    id: &str,
    start: Instant,
    timeout: Duration,
) -> Result<Duration, BenchError> {
    loop {
        let lag = h.fabric.engine().compute_pressure(id).map_err(setup)?;
        if lag == 0 {
            return Ok(start.elapsed());
        }
        if start.elapsed() >= timeout {
            return Err(BenchError::AgentFailure(format!(
                "trigger still has lag {lag}"
            )));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn timeline_csv(points: &[TimelinePoint]) -> String {
    let mut s = String::from("tick,at_ms,concurrency,lag\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.tick, p.at_ms, p.concurrency, p.lag
        ));
    }
    s
}

/// Shape checks for an autoscaling timeline.
pub fn scaling_checks(points: &[TimelinePoint], t: &TriggerSection, partitions: u32) -> Vec<Check> {
    let max = t.max_concurrency.unwrap_or(partitions);
    let peak = max
        .min(partitions)
        .max(t.min_concurrency.min(partitions))
        .max(1);
    let floor = t.min_concurrency.min(peak);
    let series: Vec<String> = points.iter().map(|p| p.concurrency.to_string()).collect();
    let series = series.join("→");
    let mut checks = Vec::new();

    let reached = points.iter().position(|p| p.concurrency == peak);
    checks.push(Check::gate(
        format!("reaches {peak} within {} ticks", t.ramp_ticks),
        reached.is_some_and(|i| i < t.ramp_ticks as usize),
        series.clone(),
    ));

    let top = points.iter().map(|p| p.concurrency).max().unwrap_or(0);
    let peak_at = points
        .iter()
        .position(|p| p.concurrency == top)
        .unwrap_or(0);
    let unimodal = points[..=peak_at]
        .windows(2)
        .all(|w| w[1].concurrency >= w[0].concurrency)
        && points[peak_at..]
            .windows(2)
            .all(|w| w[1].concurrency <= w[0].concurrency);
    checks.push(Check::gate(
        "rises to its peak, then only falls",
        unimodal,
        series.clone(),
    ));

    let drained = points
        .iter()
        .skip(1)
        .position(|p| p.lag == 0)
        .map(|i| i + 1);

    let back = drained.and_then(|d| {
        points[d..]
            .iter()
            .position(|p| p.concurrency == floor)
            .map(|i| (i, points[d + i..].iter().all(|p| p.concurrency == floor)))
    });
    checks.push(Check::gate(
        format!(
            "back to {floor} within {} ticks of drain and stays",
            t.drain_ticks
        ),
        back.is_some_and(|(i, stays)| i < t.drain_ticks as usize && stays),
        format!("drained at point {drained:?}; {series}"),
    ));

    let exact = points.windows(2).all(|w| {
        w[1].concurrency
            == rescale(
                w[0].concurrency,
                w[1].lag,
                t.target_lag_per_worker,
                t.min_concurrency,
                max,
                partitions,
            )
    });
    checks.push(Check::gate(
        "every tick follows the scaling law",
        exact,
        series,
    ));
    checks
}

fn bench_trigger(
    h: &Harness,
    topic: &str,
    action: &str,
    t: &TriggerSection,
    min: u32,
    max: Option<u32>,
) -> Result<String, BenchError> {
    let mut ts = TriggerSpec::new(
        topic,
        ActionRef::Local {
            name: action.into(),
        },
    );
    ts.batch_max_records = t.batch_max_records;
    ts.batch_window_ms = 5;
    ts.eval_interval_ms = t.eval_interval_ms;
    ts.target_lag_per_worker = t.target_lag_per_worker;
    ts.min_concurrency = min;
    ts.max_concurrency = max;
    ts.start_earliest = true;
    h.fabric
        .engine()
        .register(&Principal::identity(BENCH_IDENTITY), ts)
        .map_err(|e| BenchError::Invalid(e.to_string()))
}

fn sleeping_action(h: &Harness, per_event_ms: u64, per_batch_ms: u64) -> String {
    let name = format!("bench.sleep.{}", uuid::Uuid::new_v4().simple());
    h.fabric
        .engine()
        .register_local_action(&name, move |b: &Batch| {
            let ms = per_batch_ms + per_event_ms * b.events.len() as u64;
            if ms > 0 {
                std::thread::sleep(Duration::from_millis(ms));
            }
            Ok(())
        });
    name
}

/// Pre-loads a partitioned topic, then lets one trigger work it off while
/// the autoscaler ticks.
pub fn run_trigger_scaling(
    h: &Harness,
    spec: &ExperimentSpec,
) -> Result<ExperimentOutput, BenchError> {
    let t = &spec.trigger;
    let topic = format!("bench.{}.scaling", spec.name);
    h.create_topic(&topic, t.partitions, spec.topics.replication_factor)?;
    produce_fixed(
        h,
        &topic,
        t.events,
        spec.producers.event_size_bytes.min(256),
    )?;
    let action = sleeping_action(h, t.sleep_ms, t.invocation_delay_ms);
    let start = Instant::now();
    let id = bench_trigger(h, &topic, &action, t, t.min_concurrency, t.max_concurrency)?;
    let budget = Duration::from_millis(t.eval_interval_ms) * (t.ramp_ticks + t.drain_ticks + 2)
        + Duration::from_millis(
            (t.sleep_ms * t.events + t.invocation_delay_ms * t.events) / u64::from(t.partitions),
        ) * 4
        + Duration::from_secs(60);
    let elapsed = wait_drained(h, &id, start, budget)?;
    // observe the scale-down ticks
    let engine = h.fabric.engine();
    let deadline = Instant::now() + Duration::from_millis(t.eval_interval_ms) * (t.drain_ticks + 3);
    loop {
        let tl = engine.timeline(&id).map_err(setup)?;
        let after = tl.iter().rev().take_while(|p| p.lag == 0).count();
        if after > t.drain_ticks as usize || Instant::now() >= deadline {
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let timeline = engine.timeline(&id).map_err(setup)?;
    let stats = engine.stats(&id).map_err(setup)?;
    engine
        .delete(&Principal::identity(BENCH_IDENTITY), &id)
        .map_err(setup)?;
    let mut checks = scaling_checks(&timeline, t, t.partitions);
    checks.push(Check::gate(
        "every event delivered",
        stats.delivered_records >= t.events,
        format!("{} of {}", stats.delivered_records, t.events),
    ));
    Ok(ExperimentOutput {
        name: spec.name.clone(),
        experiment: spec.experiment,
        checks,
        report: json!({
            "spec": spec,
            "timeline": timeline,
            "stats": stats,
            "drain_seconds": elapsed.as_secs_f64(),
        }),
        csv: vec![("timeline".into(), timeline_csv(&timeline))],
    })
}

/// Trigger throughput at fixed concurrency equal to the partition count.
pub fn trigger_throughput(
    h: &Harness,
    partitions: u32,
    t: &TriggerSection,
    per_batch_ms: u64,
    tag: &str,
) -> Result<f64, BenchError> {
    let topic = format!("bench.pscale.{tag}.p{partitions}");
    h.create_topic(&topic, partitions, 1)?;
    produce_fixed(h, &topic, t.events, 64)?;
    let action = sleeping_action(h, t.sleep_ms, per_batch_ms);
    let mut tt = t.clone();
    tt.eval_interval_ms = tt.eval_interval_ms.max(600_000);
    let start = Instant::now();
    let id = bench_trigger(h, &topic, &action, &tt, partitions, Some(partitions))?;
    let elapsed = wait_drained(h, &id, start, Duration::from_secs(600))?;
    h.fabric
        .engine()
        .delete(&Principal::identity(BENCH_IDENTITY), &id)
        .map_err(setup)?;
    throughput(t.events, 0.0, elapsed.as_secs_f64() * 1000.0)
        .ok_or_else(|| BenchError::AgentFailure("zero elapsed time".into()))
}

pub fn run_partition_scaling(
    h: &Harness,
    spec: &ExperimentSpec,
) -> Result<ExperimentOutput, BenchError> {
    let t = &spec.trigger;
    let counts = &t.partition_counts;
    let mut rows = Vec::new();
    let mut csv = String::from("round,partitions,invocation_delay_ms,throughput\n");
    for round in 0..spec.rounds {
        for &p in counts {
            let delays: &[u64] = if t.invocation_delay_ms > 0 {
                &[t.invocation_delay_ms, 0]
            } else {
                &[0]
            };
            for &delay in delays {
                let tp = trigger_throughput(h, p, t, delay, &format!("r{round}d{delay}"))?;
                csv.push_str(&format!("{round},{p},{delay},{tp:.1}\n"));
                rows.push(json!({"round": round, "partitions": p, "invocation_delay_ms": delay, "throughput": tp}));
            }
        }
    }
    let mean_of = |p: u32, delay: u64| {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r["partitions"] == p && r["invocation_delay_ms"] == delay)
            .filter_map(|r| r["throughput"].as_f64())
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    };
    let mut checks = Vec::new();
    if let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) {
        if hi > lo {
            let (a, b) = (
                mean_of(lo, t.invocation_delay_ms),
                mean_of(hi, t.invocation_delay_ms),
            );
            checks.push(Check::gate(
                format!("T({hi} partitions) >= {}x T({lo})", t.min_speedup),
                b >= t.min_speedup * a,
                format!(
                    "{b:.1}/s vs {a:.1}/s (x{:.2}) at {} ms per invocation",
                    b / a,
                    t.invocation_delay_ms
                ),
            ));
            if t.invocation_delay_ms > 0 {
                let (a0, b0) = (mean_of(lo, 0), mean_of(hi, 0));
                checks.push(Check::info(
                    format!("zero-delay T({hi}) vs T({lo})"),
                    b0 >= t.min_speedup * a0,
                    format!("{b0:.1}/s vs {a0:.1}/s (x{:.2})", b0 / a0),
                ));
            }
        }
    }
    Ok(ExperimentOutput {
        name: spec.name.clone(),
        experiment: spec.experiment,
        checks,
        report: json!({ "spec": spec, "runs": rows }),
        csv: vec![("partitions".into(), csv)],
    })
}

/// Fixed producer fleet spread over a growing number of single-partition
/// topics.
pub fn run_multitenancy_sweep(
    h: &Harness,
    spec: &ExperimentSpec,
) -> Result<ExperimentOutput, BenchError> {
    let m = &spec.multitenancy;
    let topics_cfg = TopicsSection {
        count: 1,
        partitions: 1,
        replication_factor: spec.topics.replication_factor,
    };
    let mut csv = String::from(ROUND_CSV_HEADER.replacen("label", "topics,role", 1));
    let mut points = Vec::new();
    for &k in &m.topic_counts {
        let mut prod = Vec::new();
        let mut cons = Vec::new();
        let mut attempt = 0;
        while (prod.len() as u32) < spec.rounds {
            if attempt >= spec.rounds + MAX_EXTRA_ROUNDS {
                return Err(BenchError::AgentFailure("too many voided rounds".into()));
            }
            let topics = topic_names(&format!("bench.{}.k{k}.r{attempt}", spec.name), k);
            attempt += 1;
            create_topics(h, &topics, &topics_cfg)?;
            let logs = h.produce_round(
                &topics,
                &spec.producers,
                spec.producers.acks,
                spec.seed + attempt as u64,
            )?;
            if let Some(why) = failed_round(&logs) {
                log::warn!("round voided: {why}");
                continue;
            }
            let round = prod.len() as u32;
            let r = analyze_round(round, &logs)
                .ok_or_else(|| BenchError::AgentFailure("empty round".into()))?;
            round_csv(&mut csv, &format!("{k},produce"), &r);
            if spec.consumers.count > 0 {
                h.wait_for_records(&topics, r.n, Duration::from_secs(60))?;
                let (clogs, _) = h.consume_round(&topics, spec.consumers.count)?;
                if let Some(cr) = analyze_round(round, &clogs) {
                    round_csv(&mut csv, &format!("{k},consume"), &cr);
                    cons.push(cr);
                }
            }
            prod.push(r);
        }
        points.push((
            k,
            combine(&format!("{k} topics produce"), prod),
            combine(&format!("{k} topics consume"), cons),
        ));
    }
    let t_of = |k: u32| points.iter().find(|p| p.0 == k).map(|p| p.1.throughput);
    let mut checks = Vec::new();
    if let (Some(t1), Some(t4)) = (t_of(1), t_of(4)) {
        checks.push(Check::gate(
            "T(4 topics) > T(1 topic)",
            t4 > t1,
            format!("{t4:.0}/s vs {t1:.0}/s"),
        ));
    }
    if let (Some(t4), Some(&kmax)) = (t_of(4), m.topic_counts.iter().max()) {
        if kmax > 4 {
            let tk = t_of(kmax).unwrap_or(0.0);
            let rel = (tk - t4).abs() / t4;
            checks.push(Check::gate(
                format!(
                    "|T({kmax}) - T(4)| <= {:.0}% of T(4)",
                    m.plateau_tolerance * 100.0
                ),
                rel <= m.plateau_tolerance,
                format!("{tk:.0}/s vs {t4:.0}/s ({:.1}%)", rel * 100.0),
            ));
        }
    }
    let curve: Vec<Value> = points
        .iter()
        .map(|(k, p, c)| {
            json!({
                "topics": k,
                "producer_throughput": p.throughput,
                "consumer_throughput": (c.rounds_used > 0).then_some(c.throughput),
                "producer": p,
                "consumer": c,
            })
        })
        .collect();
    Ok(ExperimentOutput {
        name: spec.name.clone(),
        experiment: spec.experiment,
        checks,
        report: json!({ "spec": spec, "curve": curve }),
        csv: vec![("sweep".into(), csv)],
    })
}
