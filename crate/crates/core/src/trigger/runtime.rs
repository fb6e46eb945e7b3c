use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use rand::Rng;
use serde::Serialize;

use super::action::{post_webhook, Batch, BatchEvent};
use super::spec::{rescale, ActionRef, TriggerSpec, HARD_MAX_BYTES, HARD_MAX_RECORDS};
use super::EngineInner;
use crate::broker::{Acks, BrokerError, Cluster, Principal, Record};
use crate::pattern::{any_match, Verdict};

const INVOCATION_LOG_CAP: usize = 100_000;
const FETCH_CHUNK: usize = 500;

/// Where an injected worker crash fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CrashPoint {
    /// After the batch is read, before the action runs.
    BeforeInvoke,
    /// After the action succeeded, before offsets are committed.
    BeforeCommit,
    /// After offsets are committed.
    AfterCommit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InvocationOutcome {
    Success,
    DeadLettered,
    /// A single record larger than `batch_max_bytes`, sent straight to the
    /// dead-letter topic.
    Oversized,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvocationRecord {
    pub batch_id: u64,
    pub partition: u32,
    pub first_offset: u64,
    pub last_offset: u64,
    pub records: usize,
    pub bytes: u64,
    pub outcome: InvocationOutcome,
    pub attempts: u32,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TimelinePoint {
    pub tick: u64,
    /// Milliseconds since the trigger started.
    pub at_ms: u64,
    pub concurrency: u32,
    pub lag: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TriggerStats {
    pub delivered_records: u64,
    pub delivered_batches: u64,
    pub filtered_records: u64,
    pub skipped_unstructured: u64,
    pub dead_lettered_records: u64,
    pub attempts: u64,
    pub failed_attempts: u64,
    pub crashes: u64,
    pub hard_limit_violations: u64,
    pub active_invocations: u32,
    pub max_active_invocations: u32,
}

#[derive(Default)]
struct Counters {
    delivered_records: AtomicU64,
    delivered_batches: AtomicU64,
    filtered_records: AtomicU64,
    skipped_unstructured: AtomicU64,
    dead_lettered_records: AtomicU64,
    attempts: AtomicU64,
    failed_attempts: AtomicU64,
    crashes: AtomicU64,
    hard_limit_violations: AtomicU64,
    active: AtomicU32,
    max_active: AtomicU32,
}

struct Worker {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

/// Marker for an injected crash unwinding a worker iteration.
struct Crashed;

enum Step {
    Idle,
    Progress,
}

struct Plan {
    events: Vec<BatchEvent>,
    bytes: u64,
    oversized: Option<Record>,
    next: u64,
}

pub(crate) struct Runtime {
    pub(crate) id: String,
    engine: Weak<EngineInner>,
    cluster: Cluster,
    spec: RwLock<Arc<TriggerSpec>>,
    started: Instant,
    leases: Mutex<Vec<Arc<AtomicBool>>>,
    assignment: RwLock<Vec<Vec<u32>>>,
    workers: Mutex<Vec<Worker>>,
    retired: Mutex<Vec<JoinHandle<()>>>,
    concurrency: AtomicU32,
    partitions: AtomicU32,
    stop: AtomicBool,
    wake: (Mutex<bool>, Condvar),
    evaluator: Mutex<Option<JoinHandle<()>>>,
    tick: AtomicU64,
    timeline: Mutex<Vec<TimelinePoint>>,
    log: Mutex<VecDeque<InvocationRecord>>,
    counters: Counters,
    crashes: Mutex<Vec<(CrashPoint, u64)>>,
}

struct Lease(Arc<AtomicBool>);

impl Drop for Lease {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl Runtime {
    pub(crate) fn start(
        engine: &Arc<EngineInner>,
        spec: TriggerSpec,
        partitions: u32,
    ) -> Arc<Self> {
        let rt = Arc::new(Self {
            id: spec.trigger_id.clone(),
            engine: Arc::downgrade(engine),
            cluster: engine.cluster.clone(),
            spec: RwLock::new(Arc::new(spec)),
            started: Instant::now(),
            leases: Mutex::new(Vec::new()),
            assignment: RwLock::new(Vec::new()),
            workers: Mutex::new(Vec::new()),
            retired: Mutex::new(Vec::new()),
            concurrency: AtomicU32::new(0),
            partitions: AtomicU32::new(partitions),
            stop: AtomicBool::new(false),
            wake: (Mutex::new(false), Condvar::new()),
            evaluator: Mutex::new(None),
            tick: AtomicU64::new(0),
            timeline: Mutex::new(Vec::new()),
            log: Mutex::new(VecDeque::new()),
            counters: Counters::default(),
            crashes: Mutex::new(Vec::new()),
        });
        let initial = {
            let s = rt.spec();
            s.min_concurrency.min(partitions).max(1)
        };
        rt.apply_concurrency(initial, partitions);
        let lag = rt.compute_pressure();
        rt.timeline.lock().push(TimelinePoint {
            tick: 0,
            at_ms: 0,
            concurrency: initial,
            lag,
        });
        let me = Arc::clone(&rt);
        let handle = thread::Builder::new()
            .name(format!("trigger-eval-{}", short(&rt.id)))
            .spawn(move || me.evaluator_loop())
            .expect("spawn evaluator");
        *rt.evaluator.lock() = Some(handle);
        rt
    }

    pub(crate) fn spec(&self) -> Arc<TriggerSpec> {
        Arc::clone(&self.spec.read())
    }

    /// Takes effect at the next batch boundary; in-flight batches keep the
    /// snapshot they started with.
    pub(crate) fn replace_spec(&self, spec: TriggerSpec) {
        *self.spec.write() = Arc::new(spec);
        self.notify();
    }

    pub(crate) fn concurrency(&self) -> u32 {
        self.concurrency.load(Ordering::Acquire)
    }

    pub(crate) fn timeline(&self) -> Vec<TimelinePoint> {
        self.timeline.lock().clone()
    }

    pub(crate) fn invocations(&self) -> Vec<InvocationRecord> {
        self.log.lock().iter().cloned().collect()
    }

    pub(crate) fn stats(&self) -> TriggerStats {
        let c = &self.counters;
        TriggerStats {
            delivered_records: c.delivered_records.load(Ordering::Relaxed),
            delivered_batches: c.delivered_batches.load(Ordering::Relaxed),
            filtered_records: c.filtered_records.load(Ordering::Relaxed),
            skipped_unstructured: c.skipped_unstructured.load(Ordering::Relaxed),
            dead_lettered_records: c.dead_lettered_records.load(Ordering::Relaxed),
            attempts: c.attempts.load(Ordering::Relaxed),
            failed_attempts: c.failed_attempts.load(Ordering::Relaxed),
            crashes: c.crashes.load(Ordering::Relaxed),
            hard_limit_violations: c.hard_limit_violations.load(Ordering::Relaxed),
            active_invocations: c.active.load(Ordering::Relaxed),
            max_active_invocations: c.max_active.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn inject_crash(&self, point: CrashPoint, after: u64) {
        self.crashes.lock().push((point, after));
    }

    /// Total unprocessed records across partitions, measured against the
    /// committed high watermark.
    pub(crate) fn compute_pressure(&self) -> u64 {
        let spec = self.spec();
        let group = spec.group_id();
        let n = self.topic_partitions(&spec);
        let mut lag = 0u64;
        for p in 0..n {
            let Ok(info) = self.cluster.partition_info(&spec.topic, p) else {
                continue;
            };
            let committed = self
                .cluster
                .committed_offset(&Principal::Internal, &group, &spec.topic, p)
                .ok()
                .flatten()
                .unwrap_or(info.log_start);
            lag += info
                .high_watermark
                .saturating_sub(committed.max(info.log_start));
        }
        lag
    }

    /// One autoscaler evaluation; returns the new concurrency.
    pub(crate) fn evaluate(self: &Arc<Self>) -> u32 {
        let spec = self.spec();
        let partitions = self.topic_partitions(&spec);
        let lag = self.compute_pressure();
        let current = self.concurrency();
        let max = spec.max_concurrency.unwrap_or(partitions);
        let next = rescale(
            current,
            lag,
            spec.target_lag_per_worker,
            spec.min_concurrency,
            max,
            partitions,
        );
        if next != current || partitions != self.partitions.load(Ordering::Acquire) {
            self.apply_concurrency(next, partitions);
        }
        let tick = self.tick.fetch_add(1, Ordering::AcqRel) + 1;
        self.timeline.lock().push(TimelinePoint {
            tick,
            at_ms: self.started.elapsed().as_millis() as u64,
            concurrency: next,
            lag,
        });
        log::debug!(
            "trigger {} tick {tick}: lag {lag}, concurrency {current} -> {next}",
            self.id
        );
        next
    }

    pub(crate) fn shutdown(&self) {
        if self.stop.swap(true, Ordering::AcqRel) {
            return;
        }
        self.notify();
        let me = thread::current().id();
        let mut handles: Vec<JoinHandle<()>> = self
            .workers
            .lock()
            .drain(..)
            .filter_map(|mut w| {
                w.stop.store(true, Ordering::Release);
                w.handle.take()
            })
            .collect();
        handles.extend(self.retired.lock().drain(..));
        handles.extend(self.evaluator.lock().take());
        for h in handles {
            if h.thread().id() != me {
                let _ = h.join();
            }
        }
    }

    fn notify(&self) {
        let (m, cv) = &self.wake;
        *m.lock() = true;
        cv.notify_all();
    }

    fn topic_partitions(&self, spec: &TriggerSpec) -> u32 {
        self.cluster
            .topic(&spec.topic)
            .map(|t| t.partitions)
            .unwrap_or_else(|| self.partitions.load(Ordering::Acquire))
    }

    fn evaluator_loop(self: Arc<Self>) {
        loop {
            let interval = Duration::from_millis(self.spec().eval_interval_ms);
            let deadline = Instant::now() + interval;
            {
                let (m, cv) = &self.wake;
                let mut woken = m.lock();
                while !self.stop.load(Ordering::Acquire) && Instant::now() < deadline {
                    if *woken {
                        // spec changed; the interval may have too
                        *woken = false;
                        let fresh = Duration::from_millis(self.spec().eval_interval_ms);
                        if fresh != interval {
                            break;
                        }
                    }
                    cv.wait_until(&mut woken, deadline);
                }
            }
            if self.stop.load(Ordering::Acquire) {
                return;
            }
            if Instant::now() >= deadline {
                self.evaluate();
            }
        }
    }

    fn apply_concurrency(self: &Arc<Self>, n: u32, partitions: u32) {
        {
            let mut leases = self.leases.lock();
            while leases.len() < partitions as usize {
                leases.push(Arc::new(AtomicBool::new(false)));
            }
        }
        self.partitions.store(partitions, Ordering::Release);
        let n = n.max(1) as usize;
        let mut assignment = vec![Vec::new(); n];
        for p in 0..partitions {
            assignment[p as usize % n].push(p);
        }
        *self.assignment.write() = assignment;
        let mut workers = self.workers.lock();
        while workers.len() > n {
            let mut w = workers.pop().expect("non-empty");
            w.stop.store(true, Ordering::Release);
            if let Some(h) = w.handle.take() {
                self.retired.lock().push(h);
            }
        }
        while workers.len() < n {
            let idx = workers.len();
            let stop = Arc::new(AtomicBool::new(false));
            let rt = Arc::clone(self);
            let flag = Arc::clone(&stop);
            let handle = thread::Builder::new()
                .name(format!("trigger-{}-w{idx}", short(&self.id)))
                .spawn(move || rt.worker_loop(idx, flag))
                .expect("spawn trigger worker");
            workers.push(Worker {
                stop,
                handle: Some(handle),
            });
        }
        self.concurrency.store(n as u32, Ordering::Release);
        self.retired.lock().retain(|h| !h.is_finished());
    }

    fn worker_loop(self: Arc<Self>, idx: usize, stop: Arc<AtomicBool>) {
        let halted = |s: &Self| s.stop.load(Ordering::Acquire) || stop.load(Ordering::Acquire);
        while !halted(&self) {
            let parts = self.assignment.read().get(idx).cloned().unwrap_or_default();
            let mut progressed = false;
            for p in parts {
                if halted(&self) {
                    break;
                }
                let Some(lease) = self.acquire_lease(p) else {
                    continue;
                };
                match self.run_once(p, &stop) {
                    Ok(Step::Progress) => progressed = true,
                    Ok(Step::Idle) => {}
                    Err(Crashed) => {
                        // the worker dies and restarts from committed offsets
                        self.counters.crashes.fetch_add(1, Ordering::Relaxed);
                        progressed = true;
                    }
                }
                drop(lease);
            }
            if !progressed {
                thread::sleep(Duration::from_millis(20));
            }
        }
    }

    fn acquire_lease(&self, p: u32) -> Option<Lease> {
        let flag = Arc::clone(self.leases.lock().get(p as usize)?);
        flag.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| Lease(flag))
    }

    fn maybe_crash(&self, point: CrashPoint) -> Result<(), Crashed> {
        let mut plan = self.crashes.lock();
        let mut fire = false;
        plan.retain_mut(|(p, n)| {
            if *p != point || fire {
                return true;
            }
            if *n == 0 {
                fire = true;
                false
            } else {
                *n -= 1;
                true
            }
        });
        if fire {
            Err(Crashed)
        } else {
            Ok(())
        }
    }

    fn start_offset(&self, spec: &TriggerSpec, p: u32) -> Option<u64> {
        let group = spec.group_id();
        match self
            .cluster
            .committed_offset(&Principal::Internal, &group, &spec.topic, p)
        {
            Ok(Some(o)) => Some(o),
            // partitions added after registration start from their beginning
            Ok(None) => self
                .cluster
                .offset_range(&spec.topic, p)
                .ok()
                .map(|(s, _)| s),
            Err(_) => None,
        }
    }

    fn commit(&self, spec: &TriggerSpec, p: u32, offset: u64) -> bool {
        match self.cluster.commit_offset(
            &Principal::Internal,
            &spec.group_id(),
            &spec.topic,
            p,
            offset,
        ) {
            Ok(()) => true,
            Err(e) => {
                log::warn!(
                    "trigger {}: commit {}/{p}@{offset} failed: {e}",
                    self.id,
                    spec.topic
                );
                false
            }
        }
    }

    fn run_once(&self, p: u32, stop: &AtomicBool) -> Result<Step, Crashed> {
        let spec = self.spec();
        let Some(start) = self.start_offset(&spec, p) else {
            return Ok(Step::Idle);
        };
        let plan = match self.collect(&spec, p, start, stop) {
            Ok(plan) => plan,
            Err(BrokerError::OffsetOutOfRange { earliest, .. }) if start < earliest => {
                // retention removed records we never processed
                self.commit(&spec, p, earliest);
                return Ok(Step::Progress);
            }
            Err(e) => {
                log::debug!("trigger {}: fetch {}/{p} failed: {e}", self.id, spec.topic);
                thread::sleep(Duration::from_millis(100));
                return Ok(Step::Idle);
            }
        };
        if plan.next == start {
            return Ok(Step::Idle);
        }
        let began = Instant::now();
        if let Some(rec) = plan.oversized {
            if !self.dead_letter(&spec, p, std::slice::from_ref(&rec)) {
                return Ok(Step::Idle);
            }
            self.commit(&spec, p, plan.next);
            self.record(InvocationRecord {
                batch_id: self.next_batch_id(),
                partition: p,
                first_offset: rec.offset,
                last_offset: rec.offset,
                records: 1,
                bytes: rec.payload_len() as u64,
                outcome: InvocationOutcome::Oversized,
                attempts: 0,
                duration_ms: 0,
            });
            return Ok(Step::Progress);
        }
        if plan.events.is_empty() {
            // everything in range was filtered out
            self.commit(&spec, p, plan.next);
            return Ok(Step::Progress);
        }
        self.maybe_crash(CrashPoint::BeforeInvoke)?;

        if plan.events.len() > spec.batch_max_records as usize
            || plan.bytes > spec.batch_max_bytes
            || plan.events.len() > HARD_MAX_RECORDS as usize
            || plan.bytes > HARD_MAX_BYTES
        {
            self.counters
                .hard_limit_violations
                .fetch_add(1, Ordering::Relaxed);
        }
        let mut batch = Batch {
            batch_id: self.next_batch_id(),
            trigger_id: self.id.clone(),
            topic: spec.topic.clone(),
            partition: p,
            events: plan.events,
            attempt: 0,
        };
        let mut ok = false;
        for attempt in 1..=spec.retry_max_attempts {
            batch.attempt = attempt;
            if self.invoke(&spec, &batch) {
                ok = true;
                break;
            }
            if attempt < spec.retry_max_attempts && !self.sleep_backoff(attempt, stop) {
                // trigger stopped mid-retry; leave the batch uncommitted
                return Ok(Step::Idle);
            }
        }
        self.maybe_crash(CrashPoint::BeforeCommit)?;
        let outcome = if ok {
            self.counters
                .delivered_records
                .fetch_add(batch.events.len() as u64, Ordering::Relaxed);
            self.counters
                .delivered_batches
                .fetch_add(1, Ordering::Relaxed);
            InvocationOutcome::Success
        } else {
            let records: Vec<Record> = batch
                .events
                .iter()
                .map(|e| Record {
                    offset: e.offset,
                    timestamp: e.timestamp_ms,
                    key: e.key.clone(),
                    value: e.value.clone(),
                })
                .collect();
            if !self.dead_letter(&spec, p, &records) {
                return Ok(Step::Idle);
            }
            InvocationOutcome::DeadLettered
        };
        if !self.commit(&spec, p, plan.next) {
            return Ok(Step::Idle);
        }
        self.record(InvocationRecord {
            batch_id: batch.batch_id,
            partition: p,
            first_offset: batch.first_offset(),
            last_offset: batch.last_offset(),
            records: batch.events.len(),
            bytes: plan.bytes,
            outcome,
            attempts: batch.attempt,
            duration_ms: began.elapsed().as_millis() as u64,
        });
        self.maybe_crash(CrashPoint::AfterCommit)?;
        Ok(Step::Progress)
    }

    /// Reads forward from `start`, applying filters, until the batch is full
    /// by count or bytes, the window since the first match expires, or the
    /// partition runs dry.
    fn collect(
        &self,
        spec: &TriggerSpec,
        p: u32,
        start: u64,
        stop: &AtomicBool,
    ) -> Result<Plan, BrokerError> {
        let mut plan = Plan {
            events: Vec::new(),
            bytes: 0,
            oversized: None,
            next: start,
        };
        let max_records = spec.batch_max_records as usize;
        let window = Duration::from_millis(spec.batch_window_ms);
        let fetch_bytes = (spec.batch_max_bytes as usize).clamp(1 << 20, 7 << 20);
        let mut first_at: Option<Instant> = None;
        'outer: loop {
            let recs = self.cluster.fetch(
                &Principal::Internal,
                &spec.topic,
                p,
                plan.next,
                FETCH_CHUNK,
                fetch_bytes,
            )?;
            if recs.is_empty() {
                let Some(first) = first_at else { break };
                let remaining = window.saturating_sub(first.elapsed());
                if remaining.is_zero()
                    || stop.load(Ordering::Acquire)
                    || self.stop.load(Ordering::Acquire)
                {
                    break;
                }
                self.cluster.wait_for_data(
                    &spec.topic,
                    p,
                    plan.next,
                    remaining.min(Duration::from_millis(100)),
                );
                continue;
            }
            for r in recs {
                let verdict = if spec.filters.is_empty() {
                    Verdict::Match
                } else {
                    any_match(&spec.filters, &r)
                };
                match verdict {
                    Verdict::NoMatch => {
                        self.counters
                            .filtered_records
                            .fetch_add(1, Ordering::Relaxed);
                        plan.next = r.offset + 1;
                        continue;
                    }
                    Verdict::NonStructured => {
                        self.counters
                            .skipped_unstructured
                            .fetch_add(1, Ordering::Relaxed);
                        plan.next = r.offset + 1;
                        continue;
                    }
                    Verdict::Match => {}
                }
                let size = r.payload_len() as u64;
                if size > spec.batch_max_bytes {
                    if plan.events.is_empty() {
                        plan.next = r.offset + 1;
                        plan.oversized = Some(r);
                    }
                    break 'outer;
                }
                if plan.bytes + size > spec.batch_max_bytes {
                    break 'outer;
                }
                plan.next = r.offset + 1;
                plan.bytes += size;
                plan.events.push(BatchEvent::from_record(r));
                first_at.get_or_insert_with(Instant::now);
                if plan.events.len() >= max_records {
                    break 'outer;
                }
            }
            if first_at.is_some_and(|f| f.elapsed() >= window) {
                break;
            }
            if first_at.is_none() && plan.next > start {
                // only filtered records so far; commit the skip promptly
                break;
            }
        }
        Ok(plan)
    }

    fn invoke(&self, spec: &TriggerSpec, batch: &Batch) -> bool {
        let c = &self.counters;
        c.attempts.fetch_add(1, Ordering::Relaxed);
        let active = c.active.fetch_add(1, Ordering::AcqRel) + 1;
        c.max_active.fetch_max(active, Ordering::AcqRel);
        let result = match &spec.action {
            ActionRef::Webhook {
                url,
                headers,
                timeout_ms,
            } => post_webhook(url, headers, *timeout_ms, batch),
            ActionRef::Local { name } => {
                match self.engine.upgrade().and_then(|e| e.local_action(name)) {
                    Some(action) => action.invoke(batch),
                    None => Err(format!("local action {name:?} is not registered")),
                }
            }
        };
        c.active.fetch_sub(1, Ordering::AcqRel);
        if let Err(e) = &result {
            c.failed_attempts.fetch_add(1, Ordering::Relaxed);
            log::debug!(
                "trigger {} batch {} attempt {}: {e}",
                self.id,
                batch.batch_id,
                batch.attempt
            );
        }
        result.is_ok()
    }

    /// Sleeps base×2^(attempt-1) ±20%; false if the trigger stopped.
    fn sleep_backoff(&self, attempt: u32, stop: &AtomicBool) -> bool {
        let base = self
            .engine
            .upgrade()
            .map_or(Duration::from_secs(1), |e| *e.retry_base.lock());
        let nominal = base.as_secs_f64() * f64::from(1u32 << (attempt - 1).min(20));
        let jitter: f64 = rand::thread_rng().gen_range(0.8..=1.2);
        let deadline = Instant::now() + Duration::from_secs_f64(nominal * jitter);
        while Instant::now() < deadline {
            if self.stop.load(Ordering::Acquire) || stop.load(Ordering::Acquire) {
                return false;
            }
            thread::sleep((deadline - Instant::now()).min(Duration::from_millis(20)));
        }
        true
    }

    fn dead_letter(&self, spec: &TriggerSpec, p: u32, records: &[Record]) -> bool {
        let dlq = format!("{}.dlq", spec.topic);
        let parts = self.cluster.topic(&dlq).map_or(1, |t| t.partitions.max(1));
        for r in records {
            if let Err(e) = self.cluster.append(
                &Principal::Internal,
                &dlq,
                Some(p % parts),
                &r.key,
                &r.value,
                Acks::All,
            ) {
                log::warn!(
                    "trigger {}: dead-letter append to {dlq} failed: {e}",
                    self.id
                );
                thread::sleep(Duration::from_millis(100));
                return false;
            }
        }
        self.counters
            .dead_lettered_records
            .fetch_add(records.len() as u64, Ordering::Relaxed);
        true
    }

    fn next_batch_id(&self) -> u64 {
        self.engine
            .upgrade()
            .map_or(0, |e| e.next_batch_id.fetch_add(1, Ordering::Relaxed) + 1)
    }

    fn record(&self, entry: InvocationRecord) {
        let mut log = self.log.lock();
        if log.len() >= INVOCATION_LOG_CAP {
            log.pop_front();
        }
        log.push_back(entry);
    }
}

fn short(id: &str) -> &str {
    &id[..id.len().min(8)]
}
