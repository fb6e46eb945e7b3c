//! Buffered producer. `send` enqueues and returns a handle; an I/O thread
//! routes records to partition leaders, pipelines PRODUCE frames, and a
//! reader thread per broker connection resolves responses in order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::Rng;

use super::conn::{self, read_response, Connection, TopicRoute};
use super::ClientError;
use crate::broker::{partition_for_key, Acks};
use crate::protocol::codec::{self, Request, ResponseBody, Status};

/// Records smaller than this are held for up to `linger_ms` to share a write.
const BATCH_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone)]
pub struct ProducerConfig {
    pub acks: Acks,
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub buffer_memory_bytes: usize,
    pub linger_ms: u64,
    pub max_in_flight: usize,
    /// When false, `send` fails with `BufferFull` instead of blocking.
    pub block_on_full: bool,
}

impl Default for ProducerConfig {
    fn default() -> Self {
        Self {
            acks: Acks::Leader,
            retries: 5,
            retry_backoff_ms: 100,
            buffer_memory_bytes: 262_144,
            linger_ms: 5,
            max_in_flight: 16,
            block_on_full: true,
        }
    }
}

/// Backoff before retry number `n` (1-based): base × 2^(n−1), ±20% jitter.
pub fn retry_backoff(base_ms: u64, n: u32, rng: &mut impl Rng) -> Duration {
    let nominal = base_ms as f64 * 2f64.powi(n.saturating_sub(1).min(30) as i32);
    Duration::from_secs_f64(nominal * rng.gen_range(0.8..=1.2) / 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Failed(Status),
    Exhausted,
    /// The producer was closed before the record resolved.
    Aborted,
}

#[derive(Debug, Clone)]
pub struct DeliveryReport {
    pub topic: String,
    pub partition: i32,
    /// −1 when unknown (acks=0 or failure).
    pub offset: i64,
    pub enqueue_ts: i64,
    pub done_ts: i64,
    pub latency_ms: f64,
    pub outcome: Outcome,
    /// Number of transmissions made, including the first.
    pub attempts: u32,
    pub enqueued_at: Instant,
    pub done_at: Instant,
}

impl DeliveryReport {
    pub fn is_ok(&self) -> bool {
        self.outcome == Outcome::Ok
    }
}

#[derive(Debug, Default)]
struct Slot {
    report: Mutex<Option<DeliveryReport>>,
    ready: Condvar,
}

/// Deferred delivery report.
#[derive(Debug, Clone)]
pub struct Delivery(Arc<Slot>);

impl Delivery {
    pub fn wait(&self) -> DeliveryReport {
        let mut g = self.0.report.lock();
        while g.is_none() {
            self.0.ready.wait(&mut g);
        }
        g.clone().unwrap()
    }

    pub fn wait_timeout(&self, timeout: Duration) -> Option<DeliveryReport> {
        let deadline = Instant::now() + timeout;
        let mut g = self.0.report.lock();
        while g.is_none() {
            if self.0.ready.wait_until(&mut g, deadline).timed_out() {
                break;
            }
        }
        g.clone()
    }

    pub fn try_get(&self) -> Option<DeliveryReport> {
        self.0.report.lock().clone()
    }
}

#[derive(Debug)]
struct Pending {
    topic: Arc<str>,
    partition: Option<u32>,
    routed: i32,
    key: Vec<u8>,
    value: Vec<u8>,
    enqueue_ts: i64,
    enqueued_at: Instant,
    attempts: u32,
    not_before: Instant,
    slot: Arc<Slot>,
}

impl Pending {
    fn size(&self) -> usize {
        self.key.len() + self.value.len() + self.topic.len() + 16
    }
}

#[derive(Debug, Default)]
struct State {
    queue: VecDeque<Pending>,
    retry: Vec<Pending>,
    buffered: usize,
    unresolved: usize,
    flushing: usize,
    closed: bool,
    stale: HashSet<Arc<str>>,
}

#[derive(Debug)]
struct Shared {
    config: ProducerConfig,
    key_id: String,
    secret: Vec<u8>,
    bootstrap: Vec<String>,
    state: Mutex<State>,
    /// Wakes the I/O thread.
    work: Condvar,
    /// Signalled when buffer space frees up or a record resolves.
    progress: Condvar,
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

impl Shared {
    fn resolve(&self, p: Pending, partition: i32, offset: i64, outcome: Outcome) {
        let done_at = Instant::now();
        let report = DeliveryReport {
            topic: p.topic.to_string(),
            partition,
            offset,
            enqueue_ts: p.enqueue_ts,
            done_ts: now_ms(),
            latency_ms: done_at.duration_since(p.enqueued_at).as_secs_f64() * 1000.0,
            outcome,
            attempts: p.attempts,
            enqueued_at: p.enqueued_at,
            done_at,
        };
        let size = p.size();
        *p.slot.report.lock() = Some(report);
        p.slot.ready.notify_all();
        let mut st = self.state.lock();
        st.buffered = st.buffered.saturating_sub(size);
        st.unresolved -= 1;
        drop(st);
        self.progress.notify_all();
    }

    /// Schedules a retry or gives up once `retries` are spent.
    fn retry_or_exhaust(&self, mut p: Pending, why: &str) {
        log::debug!(
            "produce to {} attempt {} failed: {why}",
            p.topic,
            p.attempts
        );
        if p.attempts > self.config.retries {
            let partition = p.routed;
            self.resolve(p, partition, -1, Outcome::Exhausted);
            return;
        }
        p.not_before = Instant::now()
            + retry_backoff(
                self.config.retry_backoff_ms,
                p.attempts,
                &mut rand::thread_rng(),
            );
        let mut st = self.state.lock();
        if st.closed {
            drop(st);
            let partition = p.routed;
            self.resolve(p, partition, -1, Outcome::Aborted);
            return;
        }
        st.stale.insert(p.topic.clone());
        st.retry.push(p);
        drop(st);
        self.work.notify_all();
    }
}

#[derive(Debug)]
struct Link {
    writer: BufWriter<TcpStream>,
    inflight: Arc<(Mutex<VecDeque<Pending>>, Condvar)>,
    dead: Arc<AtomicBool>,
    reader: Option<JoinHandle<()>>,
}

impl Link {
    fn open(shared: &Arc<Shared>, addr: &str) -> Result<Self, ClientError> {
        let c = Connection::connect(addr, &shared.key_id, &shared.secret)?;
        let (reader, writer) = c.into_parts();
        let inflight: Arc<(Mutex<VecDeque<Pending>>, Condvar)> = Arc::default();
        let dead = Arc::new(AtomicBool::new(false));
        let handle = {
            let shared = shared.clone();
            let inflight = inflight.clone();
            let dead = dead.clone();
            thread::Builder::new()
                .name("producer-reader".into())
                .spawn(move || read_loop(shared, reader, inflight, dead))?
        };
        Ok(Self {
            writer,
            inflight,
            dead,
            reader: Some(handle),
        })
    }

    fn kill(&mut self) {
        self.dead.store(true, Ordering::SeqCst);
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        self.kill();
    }
}

fn read_loop(
    shared: Arc<Shared>,
    mut reader: BufReader<TcpStream>,
    inflight: Arc<(Mutex<VecDeque<Pending>>, Condvar)>,
    dead: Arc<AtomicBool>,
) {
    loop {
        let resp = read_response(&mut reader);
        let (lock, cv) = &*inflight;
        let mut q = lock.lock();
        match resp {
            Ok(resp) => {
                let Some(p) = q.pop_front() else {
                    log::warn!("unexpected response with nothing in flight");
                    break;
                };
                cv.notify_all();
                drop(q);
                match (resp.status, resp.body) {
                    (Status::Ok, ResponseBody::Produce { partition, offset }) => {
                        shared.resolve(p, partition, offset, Outcome::Ok)
                    }
                    (s, _) if s.is_retriable() => shared.retry_or_exhaust(p, s.name()),
                    (s, _) => {
                        let partition = p.routed;
                        shared.resolve(p, partition, -1, Outcome::Failed(s))
                    }
                }
            }
            Err(e) => {
                dead.store(true, Ordering::SeqCst);
                let drained: Vec<Pending> = q.drain(..).collect();
                cv.notify_all();
                drop(q);
                for p in drained {
                    shared.retry_or_exhaust(p, &e.to_string());
                }
                break;
            }
        }
    }
    dead.store(true, Ordering::SeqCst);
    let (lock, cv) = &*inflight;
    let drained: Vec<Pending> = lock.lock().drain(..).collect();
    cv.notify_all();
    for p in drained {
        shared.retry_or_exhaust(p, "connection closed");
    }
}

/// Thread-safe producer handle.
#[derive(Debug)]
pub struct Producer {
    shared: Arc<Shared>,
    io: Option<JoinHandle<()>>,
}

impl Producer {
    /// `bootstrap` lists broker addresses used to discover routing.
    pub fn new(
        bootstrap: Vec<String>,
        key_id: &str,
        secret: &[u8],
        config: ProducerConfig,
    ) -> Result<Self, ClientError> {
        if bootstrap.is_empty() {
            return Err(ClientError::NoBrokers);
        }
        if config.max_in_flight == 0 || config.buffer_memory_bytes == 0 {
            return Err(ClientError::Config(
                "max_in_flight and buffer_memory_bytes must be >= 1".into(),
            ));
        }
        let shared = Arc::new(Shared {
            config,
            key_id: key_id.to_string(),
            secret: secret.to_vec(),
            bootstrap,
            state: Mutex::default(),
            work: Condvar::new(),
            progress: Condvar::new(),
        });
        let io = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("producer-io".into())
                .spawn(move || IoLoop::new(shared).run())?
        };
        Ok(Self {
            shared,
            io: Some(io),
        })
    }

    pub fn config(&self) -> &ProducerConfig {
        &self.shared.config
    }

    /// Key-routed send (empty keys rotate across partitions).
    pub fn send(&self, topic: &str, key: &[u8], value: &[u8]) -> Result<Delivery, ClientError> {
        self.send_to(topic, None, key, value)
    }

    pub fn send_to(
        &self,
        topic: &str,
        partition: Option<u32>,
        key: &[u8],
        value: &[u8],
    ) -> Result<Delivery, ClientError> {
        let slot = Arc::new(Slot::default());
        let now = Instant::now();
        let p = Pending {
            topic: Arc::from(topic),
            partition,
            routed: partition.map(|p| p as i32).unwrap_or(-1),
            key: key.to_vec(),
            value: value.to_vec(),
            enqueue_ts: now_ms(),
            enqueued_at: now,
            attempts: 0,
            not_before: now,
            slot: slot.clone(),
        };
        let size = p.size();
        let budget = self.shared.config.buffer_memory_bytes;
        let mut st = self.shared.state.lock();
        if st.closed {
            return Err(ClientError::Closed);
        }
        // a single record larger than the whole budget waits for an empty buffer
        while st.buffered > 0 && st.buffered + size > budget {
            if !self.shared.config.block_on_full {
                return Err(ClientError::BufferFull);
            }
            self.shared.progress.wait(&mut st);
            if st.closed {
                return Err(ClientError::Closed);
            }
        }
        st.buffered += size;
        st.unresolved += 1;
        st.queue.push_back(p);
        drop(st);
        self.shared.work.notify_all();
        Ok(Delivery(slot))
    }

    /// Waits until every send resolves or `timeout` passes; returns the
    /// number still unresolved.
    pub fn flush(&self, timeout: Duration) -> usize {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock();
        st.flushing += 1;
        self.shared.work.notify_all();
        while st.unresolved > 0 {
            if self
                .shared
                .progress
                .wait_until(&mut st, deadline)
                .timed_out()
            {
                break;
            }
        }
        st.flushing -= 1;
        st.unresolved
    }

    pub fn unresolved(&self) -> usize {
        self.shared.state.lock().unresolved
    }
}

impl Drop for Producer {
    fn drop(&mut self) {
        self.shared.state.lock().closed = true;
        self.shared.work.notify_all();
        self.shared.progress.notify_all();
        if let Some(h) = self.io.take() {
            let _ = h.join();
        }
    }
}

struct IoLoop {
    shared: Arc<Shared>,
    routes: HashMap<Arc<str>, TopicRoute>,
    links: HashMap<String, Link>,
    meta_conn: Option<Connection>,
    round_robin: HashMap<Arc<str>, u32>,
}

impl IoLoop {
    fn new(shared: Arc<Shared>) -> Self {
        Self {
            shared,
            routes: HashMap::new(),
            links: HashMap::new(),
            meta_conn: None,
            round_robin: HashMap::new(),
        }
    }

    fn run(mut self) {
        while let Some(batch) = self.next_batch() {
            self.dispatch(batch);
        }
        self.shutdown();
    }

    /// Collects due records, honouring linger. `None` once closed.
    fn next_batch(&mut self) -> Option<Vec<Pending>> {
        let linger = Duration::from_millis(self.shared.config.linger_ms);
        let mut st = self.shared.state.lock();
        loop {
            if st.closed {
                return None;
            }
            let now = Instant::now();
            let due_retry = st.retry.iter().any(|p| p.not_before <= now);
            let queued_bytes: usize = st.queue.iter().map(Pending::size).sum();
            let oldest = st.queue.front().map(|p| p.enqueued_at);
            let queue_ready = match oldest {
                Some(t) => {
                    st.flushing > 0
                        || queued_bytes >= BATCH_BYTES
                        || now.duration_since(t) >= linger
                }
                None => false,
            };
            if due_retry || queue_ready {
                let mut batch = Vec::new();
                let mut i = 0;
                while i < st.retry.len() {
                    if st.retry[i].not_before <= now {
                        batch.push(st.retry.swap_remove(i));
                    } else {
                        i += 1;
                    }
                }
                if queue_ready {
                    batch.extend(st.queue.drain(..));
                }
                return Some(batch);
            }
            let mut wake = st.retry.iter().map(|p| p.not_before).min();
            if let Some(t) = oldest {
                let at = t + linger;
                wake = Some(wake.map_or(at, |w| w.min(at)));
            }
            match wake {
                Some(at) => {
                    self.shared.work.wait_until(&mut st, at);
                }
                None => self.shared.work.wait(&mut st),
            }
        }
    }

    fn route(&mut self, topic: &Arc<str>) -> Result<TopicRoute, ClientError> {
        let stale = self.shared.state.lock().stale.remove(topic);
        if !stale {
            if let Some(r) = self.routes.get(topic) {
                return Ok(r.clone());
            }
        }
        let mut candidates: Vec<String> = self.shared.bootstrap.clone();
        for r in self.routes.values() {
            candidates.extend(r.brokers.values().cloned());
        }
        for attempt in 0..2 {
            if self.meta_conn.is_none() {
                let c = conn::connect_any(&candidates, &self.shared.key_id, &self.shared.secret)?;
                self.meta_conn = Some(c);
            }
            match self.meta_conn.as_mut().unwrap().metadata(topic) {
                Ok(r) => {
                    self.routes.insert(topic.clone(), r.clone());
                    return Ok(r);
                }
                Err(ClientError::Status(s)) => return Err(ClientError::Status(s)),
                Err(e) => {
                    self.meta_conn = None;
                    if attempt == 1 {
                        return Err(e);
                    }
                }
            }
        }
        unreachable!()
    }

    fn dispatch(&mut self, batch: Vec<Pending>) {
        let acks = self.shared.config.acks;
        let max_in_flight = self.shared.config.max_in_flight;
        let mut touched: Vec<String> = Vec::new();
        let mut fire_and_forget: Vec<(String, Pending)> = Vec::new();
        for mut p in batch {
            p.attempts += 1;
            let route = match self.route(&p.topic) {
                Ok(r) => r,
                Err(e) if e.status().is_some_and(|s| !s.is_retriable()) => {
                    let partition = p.routed;
                    self.shared.resolve(
                        p,
                        partition,
                        -1,
                        Outcome::Failed(e.status().expect("checked")),
                    );
                    continue;
                }
                Err(e) => {
                    self.shared.retry_or_exhaust(p, &e.to_string());
                    continue;
                }
            };
            let n = route.partitions();
            let partition = match p.partition {
                Some(x) => x,
                None if p.routed >= 0 => p.routed as u32,
                None if p.key.is_empty() => {
                    let c = self.round_robin.entry(p.topic.clone()).or_insert(0);
                    *c = c.wrapping_add(1);
                    (*c - 1) % n.max(1)
                }
                None => partition_for_key(&p.key, n.max(1)),
            };
            p.routed = partition as i32;
            if partition >= n {
                self.shared.resolve(
                    p,
                    partition as i32,
                    -1,
                    Outcome::Failed(Status::UnknownPartition),
                );
                continue;
            }
            let Some(addr) = route.leader_addr(partition).map(String::from) else {
                self.shared.retry_or_exhaust(p, "no leader");
                continue;
            };
            if self
                .links
                .get(&addr)
                .is_some_and(|l| l.dead.load(Ordering::SeqCst))
            {
                self.links.remove(&addr);
            }
            if !self.links.contains_key(&addr) {
                match Link::open(&self.shared, &addr) {
                    Ok(l) => {
                        self.links.insert(addr.clone(), l);
                    }
                    Err(e) if e.status().is_some_and(|s| !s.is_retriable()) => {
                        self.shared.resolve(
                            p,
                            partition as i32,
                            -1,
                            Outcome::Failed(e.status().expect("checked")),
                        );
                        continue;
                    }
                    Err(e) => {
                        self.shared.retry_or_exhaust(p, &e.to_string());
                        continue;
                    }
                }
            }
            let link = self.links.get_mut(&addr).unwrap();
            let frame = codec::encode_request(&Request::Produce {
                topic: p.topic.to_string(),
                partition: partition as i32,
                acks: acks.wire(),
                key: p.key.clone(),
                value: p.value.clone(),
            });
            if acks != Acks::None {
                let (lock, cv) = &*link.inflight;
                let mut q = lock.lock();
                while q.len() >= max_in_flight && !link.dead.load(Ordering::SeqCst) {
                    drop(q);
                    // the reader may be waiting on a response to bytes still in our buffer
                    let _ = link.writer.flush();
                    q = lock.lock();
                    if q.len() >= max_in_flight {
                        cv.wait_for(&mut q, Duration::from_millis(50));
                    }
                }
                if link.dead.load(Ordering::SeqCst) {
                    drop(q);
                    self.shared.retry_or_exhaust(p, "connection lost");
                    continue;
                }
                q.push_back(p);
                drop(q);
                if link.writer.write_all(&frame).is_err() {
                    link.kill();
                    continue;
                }
            } else {
                if link.writer.write_all(&frame).is_err() {
                    link.kill();
                    self.shared.retry_or_exhaust(p, "write failed");
                    continue;
                }
                fire_and_forget.push((addr.clone(), p));
            }
            if !touched.contains(&addr) {
                touched.push(addr);
            }
        }
        let mut failed = HashSet::new();
        for addr in touched {
            if let Some(link) = self.links.get_mut(&addr) {
                if link.writer.flush().is_err() {
                    link.kill();
                    failed.insert(addr);
                }
            }
        }
        for (addr, p) in fire_and_forget {
            if failed.contains(&addr) {
                self.shared.retry_or_exhaust(p, "write failed");
            } else {
                let partition = p.routed;
                self.shared.resolve(p, partition, -1, Outcome::Ok);
            }
        }
    }

    fn shutdown(&mut self) {
        let mut st = self.shared.state.lock();
        let mut left: Vec<Pending> = st.queue.drain(..).collect();
        left.append(&mut st.retry);
        drop(st);
        for p in left {
            let partition = p.routed;
            self.shared.resolve(p, partition, -1, Outcome::Aborted);
        }
        for (_, mut link) in self.links.drain() {
            link.kill();
        }
        let mut st = self.shared.state.lock();
        let left: Vec<Pending> = st.retry.drain(..).collect();
        drop(st);
        for p in left {
            let partition = p.routed;
            self.shared.resolve(p, partition, -1, Outcome::Aborted);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backoff_schedule() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for (n, nominal) in [
            (1u32, 100.0),
            (2, 200.0),
            (3, 400.0),
            (4, 800.0),
            (5, 1600.0),
        ] {
            for _ in 0..100 {
                let d = retry_backoff(100, n, &mut rng).as_secs_f64() * 1000.0;
                assert!(
                    d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9,
                    "{n}: {d}"
                );
            }
        }
    }
}
