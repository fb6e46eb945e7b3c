//! Edge aggregator: ingests local events, drops duplicates and
//! uninteresting events, and forwards the rest to a fabric topic in
//! batches, spooling to disk while the fabric is unreachable.

mod source;
mod spool;

use std::collections::{HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use source::{replay_file, DirWatcher, SocketSource};
pub use spool::Spool;

use crate::broker::Acks;
use crate::client::{Credentials, Outcome, Producer, ProducerConfig};
use crate::pattern::{parse_filter_criteria, Pattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEvent {
    pub event_id: String,
    pub event_type: String,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub attrs: Map<String, Value>,
    #[serde(default)]
    pub observed_ts: i64,
}

impl LocalEvent {
    pub fn to_document(&self) -> Value {
        serde_json::to_value(self).expect("serializable event")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IngestOutcome {
    Accepted,
    Duplicate,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceConfig {
    Replay {
        path: PathBuf,
    },
    Dir {
        path: PathBuf,
        #[serde(default = "d_poll")]
        poll_ms: u64,
        /// Emit each observed change this many times, mimicking monitors
        /// that report one change through several hooks.
        #[serde(default = "d_one")]
        duplicate_factor: u32,
    },
    Socket {
        path: PathBuf,
    },
}

fn d_poll() -> u64 {
    200
}
fn d_one() -> u32 {
    1
}

/// Where forwarded events go. Omitted fields come from the CLI profile.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct FabricTarget {
    #[serde(default)]
    pub brokers: Vec<String>,
    #[serde(default)]
    pub key_id: String,
    #[serde(default)]
    pub secret_hex: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    pub target_topic: String,
    #[serde(default = "d_window")]
    pub dedupe_window: usize,
    /// Filter criteria in the trigger shape, or a single pattern document.
    #[serde(default)]
    pub forward_pattern: Option<Value>,
    #[serde(default = "d_spool_dir")]
    pub spool_dir: PathBuf,
    #[serde(default = "d_spool_max")]
    pub spool_max_bytes: u64,
    #[serde(default = "d_flush_batch")]
    pub flush_batch: usize,
    #[serde(default = "d_flush_bytes")]
    pub flush_bytes: usize,
    #[serde(default = "d_interval")]
    pub interval_ms: u64,
    #[serde(default = "d_queue")]
    pub queue_capacity: usize,
    /// Record key for forwarded events; one key keeps a source's events on
    /// one partition and therefore in order.
    #[serde(default = "d_source_id")]
    pub source_id: String,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub fabric: Option<FabricTarget>,
}

fn d_window() -> usize {
    10_000
}
fn d_spool_dir() -> PathBuf {
    PathBuf::from("spool")
}
fn d_spool_max() -> u64 {
    1 << 30
}
fn d_flush_batch() -> usize {
    500
}
fn d_flush_bytes() -> usize {
    1 << 20
}
fn d_interval() -> u64 {
    1000
}
fn d_queue() -> usize {
    10_000
}
fn d_source_id() -> String {
    "edge".into()
}

impl AggregatorConfig {
    pub fn new(target_topic: &str, spool_dir: impl Into<PathBuf>) -> Self {
        Self {
            target_topic: target_topic.into(),
            dedupe_window: d_window(),
            forward_pattern: None,
            spool_dir: spool_dir.into(),
            spool_max_bytes: d_spool_max(),
            flush_batch: d_flush_batch(),
            flush_bytes: d_flush_bytes(),
            interval_ms: d_interval(),
            queue_capacity: d_queue(),
            source_id: d_source_id(),
            source: None,
            fabric: None,
        }
    }

    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: AggregatorConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.spool_dir);
        match &mut cfg.source {
            Some(SourceConfig::Replay { path }) | Some(SourceConfig::Socket { path }) => fix(path),
            Some(SourceConfig::Dir { path, .. }) => fix(path),
            None => {}
        }
        Ok(cfg)
    }

    pub fn patterns(&self) -> anyhow::Result<Vec<Pattern>> {
        match &self.forward_pattern {
            None => Ok(Vec::new()),
            Some(v @ Value::Array(_)) => Ok(parse_filter_criteria(v)?),
            Some(Value::String(s)) => Ok(vec![Pattern::parse(s)?]),
            Some(v) => Ok(vec![Pattern::from_value(v)?]),
        }
    }
}

/// Delivers one batch; `Err` means none of it can be assumed delivered.
pub trait Forwarder: Send {
    fn forward(&mut self, topic: &str, batch: &[SpoolItem]) -> Result<(), String>;
}

/// (key, value, observed timestamp)
pub type SpoolItem = (Vec<u8>, Vec<u8>, i64);

/// Forwards through the client SDK with acks=1.
pub struct ProducerForwarder {
    producer: Producer,
    timeout: Duration,
}

impl ProducerForwarder {
    pub fn new(brokers: Vec<String>, key_id: &str, secret: &[u8]) -> anyhow::Result<Self> {
        let cfg = ProducerConfig {
            acks: Acks::Leader,
            retries: 2,
            ..ProducerConfig::default()
        };
        Ok(Self {
            producer: Producer::new(brokers, key_id, secret, cfg)?,
            timeout: Duration::from_secs(10),
        })
    }

    /// Resolves brokers and key from the config, falling back to `profile`.
    pub fn from_config(
        target: Option<&FabricTarget>,
        profile: &Credentials,
    ) -> anyhow::Result<Self> {
        let t = target.cloned().unwrap_or_default();
        let brokers = if t.brokers.is_empty() {
            profile.broker_addrs.clone()
        } else {
            t.brokers
        };
        let key_id = if t.key_id.is_empty() {
            profile.key_id.clone()
        } else {
            t.key_id
        };
        let secret = if t.secret_hex.is_empty() {
            profile.secret.clone()
        } else {
            hex::decode(&t.secret_hex).context("fabric.secret_hex")?
        };
        anyhow::ensure!(!brokers.is_empty(), "no broker addresses configured");
        anyhow::ensure!(!key_id.is_empty(), "no data key configured");
        Self::new(brokers, &key_id, &secret)
    }
}

impl Forwarder for ProducerForwarder {
    fn forward(&mut self, topic: &str, batch: &[SpoolItem]) -> Result<(), String> {
        let mut pending = Vec::with_capacity(batch.len());
        for (k, v, _) in batch {
            pending.push(self.producer.send(topic, k, v).map_err(|e| e.to_string())?);
        }
        let deadline = Instant::now() + self.timeout;
        for d in pending {
            let left = deadline.saturating_duration_since(Instant::now());
            match d.wait_timeout(left) {
                Some(r) if r.outcome == Outcome::Ok => {}
                Some(r) => return Err(format!("delivery failed: {:?}", r.outcome)),
                None => return Err("delivery timed out".into()),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AggregatorStats {
    pub ingested: u64,
    pub accepted: u64,
    pub duplicates: u64,
    pub filtered: u64,
    pub malformed: u64,
    pub forwarded: u64,
    pub send_failures: u64,
    pub spooled_batches: u64,
    pub spool_pending_records: u64,
    pub spool_dropped_batches: u64,
    pub spool_dropped_records: u64,
}

#[derive(Default)]
struct Counters {
    ingested: AtomicU64,
    accepted: AtomicU64,
    duplicates: AtomicU64,
    filtered: AtomicU64,
    malformed: AtomicU64,
    forwarded: AtomicU64,
    send_failures: AtomicU64,
    spooled_batches: AtomicU64,
}

/// Count-bounded recent-id set.
struct Dedupe {
    window: usize,
    ring: VecDeque<String>,
    set: HashSet<String>,
}

impl Dedupe {
    fn seen(&self, id: &str) -> bool {
        self.set.contains(id)
    }

    fn insert(&mut self, id: String) {
        if self.window == 0 {
            return;
        }
        self.set.insert(id.clone());
        self.ring.push_back(id);
        while self.ring.len() > self.window {
            if let Some(old) = self.ring.pop_front() {
                self.set.remove(&old);
            }
        }
    }
}

struct Inner {
    config: AggregatorConfig,
    patterns: Vec<Pattern>,
    dedupe: Mutex<Dedupe>,
    tx: Mutex<Option<SyncSender<SpoolItem>>>,
    counters: Counters,
    spool: Mutex<Spool>,
    drain_deadline: Mutex<Option<Instant>>,
}

pub struct Aggregator {
    inner: Arc<Inner>,
    forwarder: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Aggregator")
            .field("topic", &self.inner.config.target_topic)
            .finish()
    }
}

impl Aggregator {
    pub fn start(
        config: AggregatorConfig,
        forwarder: Box<dyn Forwarder>,
    ) -> anyhow::Result<Arc<Self>> {
        anyhow::ensure!(config.flush_batch >= 1, "flush_batch must be >= 1");
        let patterns = config.patterns()?;
        let spool = Spool::open(&config.spool_dir, config.spool_max_bytes)
            .with_context(|| format!("opening spool {}", config.spool_dir.display()))?;
        let (tx, rx) = mpsc::sync_channel(config.queue_capacity.max(1));
        let inner = Arc::new(Inner {
            dedupe: Mutex::new(Dedupe {
                window: config.dedupe_window,
                ring: VecDeque::new(),
                set: HashSet::new(),
            }),
            config,
            patterns,
            tx: Mutex::new(Some(tx)),
            counters: Counters::default(),
            spool: Mutex::new(spool),
            drain_deadline: Mutex::new(None),
        });
        let worker = Arc::clone(&inner);
        let handle = std::thread::Builder::new()
            .name("agg-forward".into())
            .spawn(move || forward_loop(&worker, rx, forwarder))
            .expect("spawn forwarder");
        Ok(Arc::new(Self {
            inner,
            forwarder: Mutex::new(Some(handle)),
        }))
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.inner.config
    }

    /// Blocks while the forward queue is full.
    pub fn ingest(&self, event: LocalEvent) -> IngestOutcome {
        let c = &self.inner.counters;
        c.ingested.fetch_add(1, Ordering::Relaxed);
        let doc = event.to_document();
        let item = {
            let mut dd = self.inner.dedupe.lock();
            if dd.seen(&event.event_id) {
                c.duplicates.fetch_add(1, Ordering::Relaxed);
                return IngestOutcome::Duplicate;
            }
            if !self.inner.patterns.is_empty() {
                let env = json!({ "value": doc });
                if !self.inner.patterns.iter().any(|p| p.matches(&env)) {
                    c.filtered.fetch_add(1, Ordering::Relaxed);
                    return IngestOutcome::Filtered;
                }
            }
            dd.insert(event.event_id.clone());
            (
                self.inner.config.source_id.as_bytes().to_vec(),
                doc.to_string().into_bytes(),
                event.observed_ts,
            )
        };
        c.accepted.fetch_add(1, Ordering::Relaxed);
        let tx = self.inner.tx.lock().clone();
        match tx {
            Some(tx) if tx.send(item.clone()).is_ok() => {}
            _ => {
                // shut down: persist rather than lose an accepted event
                let mut spool = self.inner.spool.lock();
                if spool.push(&[item]).is_ok() {
                    c.spooled_batches.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        IngestOutcome::Accepted
    }

    /// Parses one source line; malformed lines are counted and skipped.
    pub fn ingest_line(&self, line: &str) -> Option<IngestOutcome> {
        let line = line.trim();
        if line.is_empty() {
            return None;
        }
        match serde_json::from_str::<LocalEvent>(line) {
            Ok(ev) if !ev.event_id.is_empty() => Some(self.ingest(ev)),
            _ => {
                self.inner
                    .counters
                    .malformed
                    .fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn stats(&self) -> AggregatorStats {
        let c = &self.inner.counters;
        let spool = self.inner.spool.lock();
        AggregatorStats {
            ingested: c.ingested.load(Ordering::Relaxed),
            accepted: c.accepted.load(Ordering::Relaxed),
            duplicates: c.duplicates.load(Ordering::Relaxed),
            filtered: c.filtered.load(Ordering::Relaxed),
            malformed: c.malformed.load(Ordering::Relaxed),
            forwarded: c.forwarded.load(Ordering::Relaxed),
            send_failures: c.send_failures.load(Ordering::Relaxed),
            spooled_batches: c.spooled_batches.load(Ordering::Relaxed),
            spool_pending_records: spool.records() as u64,
            spool_dropped_batches: spool.dropped_batches,
            spool_dropped_records: spool.dropped_records,
        }
    }

    /// Stops ingest, forwards what is queued, and keeps draining the spool
    /// until it is empty or `drain_timeout` passes. Anything left stays
    /// spooled on disk for the next run.
    pub fn shutdown(&self, drain_timeout: Duration) -> AggregatorStats {
        *self.inner.drain_deadline.lock() = Some(Instant::now() + drain_timeout);
        self.inner.tx.lock().take();
        if let Some(h) = self.forwarder.lock().take() {
            let _ = h.join();
        }
        self.stats()
    }
}

impl Drop for Aggregator {
    fn drop(&mut self) {
        self.shutdown(Duration::ZERO);
    }
}

fn forward_loop(inner: &Inner, rx: mpsc::Receiver<SpoolItem>, mut fwd: Box<dyn Forwarder>) {
    let cfg = &inner.config;
    let c = &inner.counters;
    let interval = Duration::from_millis(cfg.interval_ms);
    let retry_every = interval.max(Duration::from_millis(50));
    let mut pending: Vec<SpoolItem> = Vec::new();
    let mut pending_bytes = 0usize;
    let mut first_at: Option<Instant> = None;
    let mut retry_at = Instant::now();
    let mut closed = false;
    loop {
        // spooled batches go first so per-source order holds
        if Instant::now() >= retry_at {
            let front = inner.spool.lock().front();
            match front {
                Ok(Some(recs)) => {
                    let batch: Vec<SpoolItem> = recs
                        .into_iter()
                        .map(|r| (r.key, r.value, r.timestamp))
                        .collect();
                    match fwd.forward(&cfg.target_topic, &batch) {
                        Ok(()) => {
                            if let Err(e) = inner.spool.lock().pop_front() {
                                log::error!("spool pop failed: {e}");
                            }
                            c.forwarded.fetch_add(batch.len() as u64, Ordering::Relaxed);
                            continue;
                        }
                        Err(e) => {
                            c.send_failures.fetch_add(1, Ordering::Relaxed);
                            log::debug!("spool drain failed: {e}");
                            retry_at = Instant::now() + retry_every;
                        }
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    log::error!("spool read failed: {e}");
                    retry_at = Instant::now() + retry_every;
                }
            }
        }

        if !closed {
            let wait = match first_at {
                Some(f) => interval.saturating_sub(f.elapsed()),
                None => Duration::from_millis(50),
            }
            .min(Duration::from_millis(50));
            match rx.recv_timeout(wait) {
                Ok(item) => {
                    pending_bytes += item.0.len() + item.1.len();
                    pending.push(item);
                    first_at.get_or_insert_with(Instant::now);
                    // take whatever else is immediately available
                    while pending.len() < cfg.flush_batch && pending_bytes < cfg.flush_bytes {
                        match rx.try_recv() {
                            Ok(item) => {
                                pending_bytes += item.0.len() + item.1.len();
                                pending.push(item);
                            }
                            Err(_) => break,
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => closed = true,
            }
        } else if !inner.spool.lock().is_empty() {
            std::thread::sleep(
                retry_at
                    .saturating_duration_since(Instant::now())
                    .min(Duration::from_millis(50)),
            );
        }

        let due = pending.len() >= cfg.flush_batch
            || pending_bytes >= cfg.flush_bytes
            || first_at.is_some_and(|f| f.elapsed() >= interval)
            || (closed && !pending.is_empty());
        if due && !pending.is_empty() {
            let batch = std::mem::take(&mut pending);
            pending_bytes = 0;
            first_at = None;
            let spool_empty = inner.spool.lock().is_empty();
            let sent = spool_empty && {
                match fwd.forward(&cfg.target_topic, &batch) {
                    Ok(()) => true,
                    Err(e) => {
                        c.send_failures.fetch_add(1, Ordering::Relaxed);
                        log::warn!("forward failed, spooling {} events: {e}", batch.len());
                        retry_at = Instant::now() + retry_every;
                        false
                    }
                }
            };
            if sent {
                c.forwarded.fetch_add(batch.len() as u64, Ordering::Relaxed);
            } else {
                match inner.spool.lock().push(&batch) {
                    Ok(()) => {
                        c.spooled_batches.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => log::error!("spool write failed, {} events lost: {e}", batch.len()),
                }
            }
        }

        if closed && pending.is_empty() {
            let spool_empty = inner.spool.lock().is_empty();
            let expired = inner
                .drain_deadline
                .lock()
                .is_none_or(|d| Instant::now() >= d);
            if spool_empty || expired {
                return;
            }
        }
    }
}
