//! Scripted end-to-end walkthroughs. Each scenario starts a fresh fabric,
//! drives it through the same HTTP and wire interfaces the CLI uses, and
//! checks the event counts that come out the other end.

mod sink;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::{json, Value};

pub use sink::{WebhookDelivery, WebhookSink};

use crate::aggregator::{Aggregator, AggregatorConfig, DirWatcher, ProducerForwarder};
use crate::broker::Acks;
use crate::client::{
    Consumer, ConsumerConfig, ControlClient, Producer, ProducerConfig, StartPosition,
};
use crate::fabric::{Fabric, FabricConfig};
use crate::trigger::Batch;

pub const SCENARIOS: [&str; 3] = ["data-automation", "task-telemetry", "workflow-monitor"];

/// Created/deleted filter used by the data-automation trigger.
pub const CREATED_PATTERN: &str = r#"{"value": {"event_type": ["created"]}}"#;

#[derive(Debug, Clone)]
pub struct DemoOptions {
    /// Fresh temp dir when unset. An existing directory is wiped first.
    pub data_dir: Option<PathBuf>,
    /// Defaults to `<data_dir>/<scenario>.transcript`.
    pub transcript: Option<PathBuf>,
    pub echo: bool,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            data_dir: None,
            transcript: None,
            echo: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoCheck {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoResult {
    pub scenario: String,
    pub passed: bool,
    pub checks: Vec<DemoCheck>,
    pub elapsed_ms: u64,
    pub transcript_path: Option<PathBuf>,
}

/// Timestamped log of a run, echoed to stdout and mirrored to a file.
pub struct Transcript {
    start: Instant,
    echo: bool,
    file: Option<File>,
    lines: Vec<String>,
    checks: Vec<DemoCheck>,
}

impl Transcript {
    fn new(path: Option<&Path>, echo: bool) -> anyhow::Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                Some(
                    File::create(p)
                        .with_context(|| format!("creating transcript {}", p.display()))?,
                )
            }
            None => None,
        };
        Ok(Self {
            start: Instant::now(),
            echo,
            file,
            lines: Vec::new(),
            checks: Vec::new(),
        })
    }

    pub fn say(&mut self, text: impl AsRef<str>) {
        let line = format!(
            "[{:>7.2}s] {}",
            self.start.elapsed().as_secs_f64(),
            text.as_ref()
        );
        if self.echo {
            println!("{line}");
        }
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{line}");
        }
        self.lines.push(line);
    }

    /// Records the CLI command equivalent to the next step.
    pub fn cmd(&mut self, text: impl AsRef<str>) {
        self.say(format!("$ octo {}", text.as_ref()));
    }

    pub fn check(&mut self, name: &str, ok: bool, detail: impl Into<String>) -> bool {
        let detail = detail.into();
        self.say(format!(
            "{} {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        ));
        self.checks.push(DemoCheck {
            name: name.into(),
            ok,
            detail,
        });
        ok
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

/// Fresh fabric with one identity logged in and holding a data key.
struct Stage {
    fabric: Fabric,
    api: ControlClient,
    key_id: String,
    secret: Vec<u8>,
    dir: PathBuf,
}

const DEMO_IDENTITY: &str = "demo";
const DEMO_PASSWORD: &str = "demo-password";

impl Stage {
    fn start(t: &mut Transcript, dir: &Path) -> anyhow::Result<Self> {
        let mut cfg = FabricConfig::local(dir.join("fabric"), 2);
        cfg.heartbeat_ms = 0;
        let fabric = Fabric::start(cfg)?;
        fabric
            .control()
            .identities()
            .add(DEMO_IDENTITY, "Demo User", DEMO_PASSWORD)?;
        t.say(format!(
            "fabric up: {} brokers, control plane on {}",
            fabric.broker_addrs().len(),
            fabric.control_url()
        ));
        let mut api = ControlClient::new(&fabric.control_url());
        t.cmd(format!("login --identity {DEMO_IDENTITY}"));
        api.login(DEMO_IDENTITY, DEMO_PASSWORD)?;
        t.cmd("key create");
        let key = api.create_key()?;
        let key_id = key["key_id"].as_str().context("key_id")?.to_string();
        let secret = hex::decode(key["secret"].as_str().context("secret")?)?;
        t.say("data key issued");
        Ok(Self {
            fabric,
            api,
            key_id,
            secret,
            dir: dir.to_path_buf(),
        })
    }

    fn create_topic(&self, t: &mut Transcript, name: &str, partitions: u32) -> anyhow::Result<()> {
        t.cmd(format!("topic create {name} --partitions {partitions}"));
        let v = self
            .api
            .create_topic(name, &json!({ "partitions": partitions }))?;
        t.say(format!(
            "topic {name}: {} partitions, rf {}",
            v["partitions"], v["replication_factor"]
        ));
        Ok(())
    }

    fn producer(&self, acks: Acks) -> anyhow::Result<Producer> {
        Ok(Producer::new(
            self.fabric.broker_addrs(),
            &self.key_id,
            &self.secret,
            ProducerConfig {
                acks,
                ..ProducerConfig::default()
            },
        )?)
    }

    fn consumer(&self, topic: &str, group: &str) -> anyhow::Result<Consumer> {
        Ok(Consumer::subscribe_all(
            self.fabric.broker_addrs(),
            &self.key_id,
            &self.secret,
            topic,
            ConsumerConfig {
                group_id: Some(group.into()),
                start: StartPosition::Earliest,
                ..ConsumerConfig::default()
            },
        )?)
    }
}

/// Reads until `want` records arrived, then keeps listening for `settle`
/// so extra deliveries would be noticed.
fn drain(
    c: &mut Consumer,
    want: usize,
    timeout: Duration,
    settle: Duration,
) -> anyhow::Result<Vec<Value>> {
    let mut out = Vec::new();
    let deadline = Instant::now() + timeout;
    let mut quiet_until: Option<Instant> = None;
    loop {
        let now = Instant::now();
        if now >= deadline || quiet_until.is_some_and(|q| now >= q) {
            break;
        }
        for r in c.poll(500, Duration::from_millis(100))? {
            out.push(serde_json::from_slice(&r.record.value).unwrap_or(Value::Null));
        }
        if out.len() >= want && quiet_until.is_none() {
            quiet_until = Some(Instant::now() + settle);
        }
    }
    c.commit_sync()?;
    Ok(out)
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

pub fn run_scenario(name: &str, opts: &DemoOptions) -> anyhow::Result<DemoResult> {
    anyhow::ensure!(
        SCENARIOS.contains(&name),
        "unknown scenario {name:?} (expected one of {})",
        SCENARIOS.join(", ")
    );
    let (dir, _tmp) = match &opts.data_dir {
        Some(d) => {
            if d.exists() {
                std::fs::remove_dir_all(d).with_context(|| format!("clearing {}", d.display()))?;
            }
            std::fs::create_dir_all(d)?;
            (d.clone(), None)
        }
        None => {
            let t = tempfile::Builder::new().prefix("octo-demo").tempdir()?;
            (t.path().to_path_buf(), Some(t))
        }
    };
    let transcript_path = opts.transcript.clone().or_else(|| {
        opts.data_dir
            .as_ref()
            .map(|d| d.join(format!("{name}.transcript")))
    });
    let mut t = Transcript::new(transcript_path.as_deref(), opts.echo)?;
    t.say(format!("scenario {name} (seed {})", opts.seed));
    let started = Instant::now();
    let stage = Stage::start(&mut t, &dir)?;
    let run = match name {
        "data-automation" => data_automation(&mut t, &stage, 50, 3),
        "task-telemetry" => {
            task_telemetry(&mut t, &stage, opts.seed, 4, 10, Duration::from_secs(3))
        }
        _ => workflow_monitor(&mut t, &stage, opts.seed, 100, 7),
    };
    if let Err(e) = &run {
        t.check("scenario completed", false, format!("{e:#}"));
    }
    drop(stage);
    let passed = !t.checks.is_empty() && t.checks.iter().all(|c| c.ok);
    t.say(format!(
        "scenario {name}: {}",
        if passed { "PASSED" } else { "FAILED" }
    ));
    Ok(DemoResult {
        scenario: name.into(),
        passed,
        checks: t.checks.clone(),
        elapsed_ms: started.elapsed().as_millis() as u64,
        transcript_path,
    })
}

/// Files appear in a watched directory; the edge aggregator dedupes the
/// watcher's repeated reports and forwards to a topic; a trigger with the
/// created-only pattern calls a webhook once per new file.
fn data_automation(t: &mut Transcript, s: &Stage, files: usize, dup: u32) -> anyhow::Result<()> {
    s.create_topic(t, "fsmon", 2)?;
    let mut sink = WebhookSink::start("127.0.0.1:0")?;
    t.say("webhook sink listening");
    let trigger = json!({
        "topic": "fsmon",
        "pattern": [{ "Pattern": CREATED_PATTERN }],
        "action": { "kind": "WEBHOOK", "url": sink.url() },
        "batch_max_records": 1,
        "batch_window_ms": 50,
    });
    t.cmd("trigger register fsmon --pattern-file created.json --webhook <sink>");
    s.api.register_trigger(&trigger)?;
    t.say(format!("trigger registered with pattern {CREATED_PATTERN}"));

    let watched = s.dir.join("watched");
    let mut cfg = AggregatorConfig::new("fsmon", s.dir.join("spool"));
    cfg.interval_ms = 100;
    cfg.source_id = "fs-edge-1".into();
    let fwd = ProducerForwarder::new(s.fabric.broker_addrs(), &s.key_id, &s.secret)?;
    let agg = Aggregator::start(cfg, Box::new(fwd))?;
    let watcher = DirWatcher::new(&watched, dup)?;
    t.cmd(format!(
        "agg run --config agg.toml   # dir watcher, each change reported x{dup}"
    ));
    let stop = Arc::new(AtomicBool::new(false));
    let runner = {
        let (agg, stop) = (Arc::clone(&agg), Arc::clone(&stop));
        std::thread::spawn(move || watcher.run(&agg, Duration::from_millis(25), &stop))
    };

    for i in 0..files {
        std::fs::write(
            watched.join(format!("scan_{i:03}.h5")),
            format!("frame {i}\n"),
        )?;
    }
    t.say(format!("created {files} files"));
    std::thread::sleep(Duration::from_millis(300));
    let removed = files.min(5);
    for i in 0..removed {
        std::fs::remove_file(watched.join(format!("scan_{i:03}.h5")))?;
    }
    t.say(format!("deleted {removed} files"));

    wait_until(Duration::from_secs(60), || sink.len() >= files);
    std::thread::sleep(Duration::from_millis(1500));
    stop.store(true, Ordering::Release);
    runner
        .join()
        .map_err(|_| anyhow::anyhow!("watcher panicked"))??;
    let stats = agg.shutdown(Duration::from_secs(5));
    sink.stop();
    t.say(format!(
        "aggregator: ingested {} accepted {} duplicates {} forwarded {}",
        stats.ingested, stats.accepted, stats.duplicates, stats.forwarded
    ));

    let deliveries = sink.deliveries();
    let mut subjects = BTreeSet::new();
    let mut kinds = BTreeSet::new();
    for d in &deliveries {
        for e in d.body["events"].as_array().into_iter().flatten() {
            subjects.insert(
                e["value"]["subject"]
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            );
            kinds.insert(
                e["value"]["event_type"]
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            );
        }
    }
    t.check(
        "webhook deliveries",
        deliveries.len() == files,
        format!("{} received, {files} expected", deliveries.len()),
    );
    t.check(
        "one delivery per file",
        subjects.len() == files,
        format!("{} distinct files", subjects.len()),
    );
    t.check(
        "only created events reach the webhook",
        kinds.len() == 1 && kinds.contains("created"),
        format!("{kinds:?}"),
    );
    t.check(
        "watcher duplicates dropped at the edge",
        stats.duplicates >= (dup as u64 - 1) * (files + removed) as u64,
        format!("{} duplicates", stats.duplicates),
    );
    Ok(())
}

/// Per-resource monitors publish utilization samples to one topic each; a
/// consumer tallies them per topic.
fn task_telemetry(
    t: &mut Transcript,
    s: &Stage,
    seed: u64,
    resources: u32,
    rate_per_sec: u32,
    duration: Duration,
) -> anyhow::Result<()> {
    let topics: Vec<String> = (0..resources)
        .map(|r| format!("telemetry.node{r}"))
        .collect();
    for topic in &topics {
        s.create_topic(t, topic, 1)?;
    }
    let per_topic = (rate_per_sec as f64 * duration.as_secs_f64()).round() as u64;
    t.say(format!(
        "starting {resources} monitors at {rate_per_sec}/s for {:.0}s",
        duration.as_secs_f64()
    ));
    let mut handles = Vec::new();
    for (r, topic) in topics.iter().enumerate() {
        let producer = s.producer(Acks::Leader)?;
        let topic = topic.clone();
        handles.push(std::thread::spawn(move || -> anyhow::Result<u64> {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed + r as u64);
            let period = Duration::from_secs_f64(1.0 / rate_per_sec as f64);
            let start = Instant::now();
            let mut pending = Vec::new();
            for seq in 0..per_topic {
                let due = start + period * seq as u32;
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
                let sample = json!({
                    "resource": format!("node{r}"),
                    "seq": seq,
                    "power_w": 180.0 + rng.gen_range(0.0..60.0),
                    "util": rng.gen_range(0.0..1.0),
                });
                pending.push(producer.send(&topic, b"", sample.to_string().as_bytes())?);
            }
            let ok = pending
                .iter()
                .filter(|d| {
                    d.wait_timeout(Duration::from_secs(30))
                        .is_some_and(|r| r.is_ok())
                })
                .count();
            Ok(ok as u64)
        }));
    }
    let mut published = Vec::new();
    for h in handles {
        published.push(
            h.join()
                .map_err(|_| anyhow::anyhow!("monitor panicked"))??,
        );
    }
    t.say(format!("monitors published {published:?}"));

    for (topic, &sent) in topics.iter().zip(&published) {
        t.cmd(format!("consume {topic} --from earliest --group dashboard"));
        let mut c = s.consumer(topic, "dashboard")?;
        let got = drain(
            &mut c,
            sent as usize,
            Duration::from_secs(30),
            Duration::from_millis(300),
        )?;
        let seqs: BTreeSet<u64> = got.iter().filter_map(|v| v["seq"].as_u64()).collect();
        let mean_power = got
            .iter()
            .filter_map(|v| v["power_w"].as_f64())
            .sum::<f64>()
            / got.len().max(1) as f64;
        t.say(format!(
            "{topic}: {} samples, mean power {mean_power:.1} W",
            got.len()
        ));
        t.check(
            &format!("{topic} count"),
            got.len() as u64 == per_topic && sent == per_topic && seqs.len() as u64 == per_topic,
            format!(
                "{} consumed, {sent} published, {per_topic} expected",
                got.len()
            ),
        );
    }
    Ok(())
}

/// Task lifecycle events flow to a topic; a trigger matching failures
/// republishes them to an alert topic.
fn workflow_monitor(
    t: &mut Transcript,
    s: &Stage,
    seed: u64,
    tasks: usize,
    failures: usize,
) -> anyhow::Result<()> {
    s.create_topic(t, "workflow.tasks", 2)?;
    s.create_topic(t, "workflow.alerts", 1)?;
    let router = s.producer(Acks::All)?;
    s.fabric
        .engine()
        .register_local_action("workflow.alert-router", move |b: &Batch| {
            let pending: Vec<_> = b
                .events
                .iter()
                .map(|e| router.send("workflow.alerts", &e.key, &e.value))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            for d in pending {
                match d.wait_timeout(Duration::from_secs(10)) {
                    Some(r) if r.is_ok() => {}
                    other => {
                        return Err(format!(
                            "alert publish failed: {:?}",
                            other.map(|r| r.outcome)
                        ))
                    }
                }
            }
            Ok(())
        });
    let trigger = json!({
        "topic": "workflow.tasks",
        "pattern": [{ "Pattern": r#"{"value": {"event": ["fail"]}}"# }],
        "action": { "kind": "LOCAL", "name": "workflow.alert-router" },
        "batch_window_ms": 100,
    });
    t.cmd("trigger register workflow.tasks --pattern-file fail.json --action local:workflow.alert-router");
    s.api.register_trigger(&trigger)?;
    t.say("failure trigger registered");

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..tasks).collect();
    ids.shuffle(&mut rng);
    let failing: BTreeSet<String> = ids[..failures]
        .iter()
        .map(|i| format!("task-{i:03}"))
        .collect();

    let producer = s.producer(Acks::Leader)?;
    let mut pending = Vec::new();
    for i in 0..tasks {
        let id = format!("task-{i:03}");
        let end = if failing.contains(&id) { "fail" } else { "end" };
        for (event, extra) in [("start", json!(null)), (end, json!(rng.gen_range(1..100)))] {
            let v = json!({ "task_id": id, "event": event, "resource": format!("node{}", i % 4), "detail": extra });
            pending.push(producer.send(
                "workflow.tasks",
                id.as_bytes(),
                v.to_string().as_bytes(),
            )?);
        }
    }
    let ok = pending
        .iter()
        .filter(|d| {
            d.wait_timeout(Duration::from_secs(30))
                .is_some_and(|r| r.is_ok())
        })
        .count();
    t.say(format!("published {ok} task events for {tasks} tasks"));

    t.cmd("consume workflow.alerts --from earliest --group oncall");
    let mut c = s.consumer("workflow.alerts", "oncall")?;
    let alerts = drain(
        &mut c,
        failures,
        Duration::from_secs(30),
        Duration::from_millis(1000),
    )?;
    let alerted: BTreeSet<String> = alerts
        .iter()
        .filter_map(|v| v["task_id"].as_str().map(str::to_string))
        .collect();
    let mut by_resource: BTreeMap<String, usize> = BTreeMap::new();
    for a in &alerts {
        *by_resource
            .entry(a["resource"].as_str().unwrap_or("?").to_string())
            .or_default() += 1;
    }
    t.say(format!("alerts by resource: {by_resource:?}"));
    t.check(
        "all task events published",
        ok == 2 * tasks,
        format!("{ok} of {}", 2 * tasks),
    );
    t.check(
        "alert count",
        alerts.len() == failures,
        format!("{} alerts, {failures} failures", alerts.len()),
    );
    t.check(
        "alerts name the failed tasks",
        alerted == failing,
        format!("{} distinct tasks", alerted.len()),
    );
    Ok(())
}
