//! A replicated partition: one log per replica, leader-driven push
//! replication, an in-sync set, and a high watermark.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};

use super::log::{LogConfig, PartitionLog};
use super::{BrokerError, BrokerId, Record, Result};

const REPLICATION_CHUNK: usize = 2048;
const REPLICATION_CHUNK_BYTES: usize = 4 * 1024 * 1024;
const REPLICATOR_TICK: Duration = Duration::from_millis(100);

#[derive(Debug)]
pub(crate) struct ReplicaState {
    /// Index into `replicas` of the current leader.
    pub leader: Option<usize>,
    pub epoch: u64,
    pub isr: Vec<bool>,
    pub alive: Vec<bool>,
    /// Cached log end per replica.
    pub ends: Vec<u64>,
    pub high_watermark: u64,
    last_caught_up: Vec<Instant>,
    /// High watermark observed when a replica went down; it truncates to
    /// this point on resume.
    halt_hw: Vec<Option<u64>>,
}

impl ReplicaState {
    fn recompute_hw(&mut self) -> bool {
        let Some(leader) = self.leader else {
            return false;
        };
        let min_isr = (0..self.ends.len())
            .filter(|&i| self.isr[i] || i == leader)
            .map(|i| self.ends[i])
            .min()
            .unwrap_or(self.ends[leader]);
        let next = min_isr
            .min(self.ends[leader])
            .max(self.high_watermark.min(self.ends[leader]));
        if next != self.high_watermark {
            self.high_watermark = next;
            true
        } else {
            false
        }
    }
}

#[derive(Debug)]
pub(crate) struct Partition {
    pub topic: String,
    pub id: u32,
    pub replicas: Vec<BrokerId>,
    pub logs: Vec<RwLock<PartitionLog>>,
    pub state: Mutex<ReplicaState>,
    /// Signalled when a leader append extends the log.
    pub appended: Condvar,
    /// Signalled when the high watermark or leadership changes.
    pub hw_changed: Condvar,
    shutdown: AtomicBool,
    sync_timeout: Duration,
}

impl Partition {
    pub fn open(
        root: &Path,
        topic: &str,
        id: u32,
        replicas: Vec<BrokerId>,
        log_config: LogConfig,
        sync_timeout: Duration,
    ) -> Result<Self> {
        let mut logs = Vec::with_capacity(replicas.len());
        for b in &replicas {
            let dir = root
                .join(format!("broker-{b}"))
                .join(format!("{topic}-{id}"));
            logs.push(RwLock::new(PartitionLog::open(dir, log_config)?));
        }
        let ends: Vec<u64> = logs.iter().map(|l| l.read().end_offset()).collect();
        // the replica holding the longest log leads after a restart
        let leader = (0..ends.len())
            .max_by_key(|&i| (ends[i], std::cmp::Reverse(i)))
            .unwrap_or(0);
        let leader_end = ends[leader];
        let mut isr = vec![false; replicas.len()];
        for (i, log) in logs.iter().enumerate() {
            if i != leader && ends[i] > leader_end {
                log.write().truncate_to(leader_end)?;
            }
            isr[i] = i == leader || ends[i].min(leader_end) == leader_end;
        }
        let ends: Vec<u64> = logs.iter().map(|l| l.read().end_offset()).collect();
        let now = Instant::now();
        let mut state = ReplicaState {
            leader: Some(leader),
            epoch: 0,
            isr,
            alive: vec![true; replicas.len()],
            ends,
            high_watermark: 0,
            last_caught_up: vec![now; replicas.len()],
            halt_hw: vec![None; replicas.len()],
        };
        state.recompute_hw();
        Ok(Self {
            topic: topic.to_string(),
            id,
            replicas,
            logs,
            state: Mutex::new(state),
            appended: Condvar::new(),
            hw_changed: Condvar::new(),
            shutdown: AtomicBool::new(false),
            sync_timeout,
        })
    }

    pub fn replica_index(&self, broker: BrokerId) -> Option<usize> {
        self.replicas.iter().position(|b| *b == broker)
    }

    pub fn leader_broker(&self) -> Option<BrokerId> {
        self.state.lock().leader.map(|i| self.replicas[i])
    }

    /// Appends on the leader. Returns the offset, timestamp, and the
    /// leadership epoch the append happened in.
    pub fn append_leader(
        &self,
        expected_leader: Option<BrokerId>,
        timestamp: i64,
        key: &[u8],
        value: &[u8],
    ) -> Result<(u64, i64, u64)> {
        let (leader, epoch) = self.current_leader(expected_leader)?;
        let (offset, ts) = self.logs[leader].write().append(timestamp, key, value)?;
        let mut st = self.state.lock();
        if st.epoch != epoch || st.leader != Some(leader) {
            return Err(self.not_leader_error(&st));
        }
        st.ends[leader] = st.ends[leader].max(offset + 1);
        if st.recompute_hw() {
            self.hw_changed.notify_all();
        }
        drop(st);
        if self.replicas.len() > 1 {
            self.appended.notify_one();
        }
        Ok((offset, ts, epoch))
    }

    pub fn current_leader(&self, expected: Option<BrokerId>) -> Result<(usize, u64)> {
        let st = self.state.lock();
        let Some(leader) = st.leader else {
            return Err(BrokerError::NoLeader);
        };
        if let Some(b) = expected {
            if self.replicas[leader] != b {
                return Err(self.not_leader_error(&st));
            }
        }
        Ok((leader, st.epoch))
    }

    fn not_leader_error(&self, st: &ReplicaState) -> BrokerError {
        match st.leader {
            None => BrokerError::NoLeader,
            Some(l) => BrokerError::NotLeader {
                partition: self.id,
                leader: Some(super::LeaderHint {
                    broker: self.replicas[l],
                    addr: None,
                }),
            },
        }
    }

    /// Blocks until `offset` is below the high watermark in the same epoch.
    pub fn await_replicated(&self, offset: u64, epoch: u64, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock();
        loop {
            if st.epoch != epoch {
                return Err(self.not_leader_error(&st));
            }
            if st.high_watermark > offset {
                return Ok(());
            }
            if self.shutdown.load(Ordering::Relaxed) {
                return Err(BrokerError::Shutdown);
            }
            if Instant::now() >= deadline {
                return Err(BrokerError::ReplicationTimeout);
            }
            self.hw_changed.wait_until(&mut st, deadline);
        }
    }

    /// Waits until the high watermark passes `offset`, up to `timeout`.
    pub fn wait_for_data(&self, offset: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock();
        while st.high_watermark <= offset {
            if self.shutdown.load(Ordering::Relaxed) || Instant::now() >= deadline {
                return false;
            }
            self.hw_changed.wait_until(&mut st, deadline);
        }
        true
    }

    pub fn high_watermark(&self) -> u64 {
        self.state.lock().high_watermark
    }

    /// Marks a replica's broker as down, transferring leadership if needed.
    pub fn on_broker_halted(&self, broker: BrokerId) -> Result<()> {
        let Some(idx) = self.replica_index(broker) else {
            return Ok(());
        };
        let mut st = self.state.lock();
        if !st.alive[idx] {
            return Ok(());
        }
        st.alive[idx] = false;
        st.halt_hw[idx] = Some(st.high_watermark);
        if st.leader == Some(idx) {
            let n = self.replicas.len();
            let candidate = (1..n)
                .map(|k| (idx + k) % n)
                .find(|&i| st.alive[i] && st.isr[i]);
            st.epoch += 1;
            match candidate {
                Some(next) => {
                    st.leader = Some(next);
                    st.isr[idx] = false;
                    let leader_end = st.ends[next];
                    for i in 0..n {
                        if i != next && st.alive[i] && st.ends[i] > leader_end {
                            self.logs[i].write().truncate_to(leader_end)?;
                            st.ends[i] = leader_end;
                        }
                    }
                    st.recompute_hw();
                }
                None => {
                    st.leader = None;
                }
            }
            self.hw_changed.notify_all();
            self.appended.notify_all();
        }
        Ok(())
    }

    /// Brings a replica back. It truncates to the high watermark it last
    /// saw and is re-synced by the replicator before rejoining the ISR.
    pub fn on_broker_resumed(&self, broker: BrokerId) -> Result<()> {
        let Some(idx) = self.replica_index(broker) else {
            return Ok(());
        };
        let mut st = self.state.lock();
        if st.alive[idx] {
            return Ok(());
        }
        st.alive[idx] = true;
        let halt_hw = st.halt_hw[idx].take();
        match st.leader {
            None if st.isr[idx] => {
                st.leader = Some(idx);
                st.epoch += 1;
                st.last_caught_up[idx] = Instant::now();
                st.recompute_hw();
                self.hw_changed.notify_all();
            }
            _ => {
                let own_end = st.ends[idx];
                let keep = halt_hw.unwrap_or(st.high_watermark).min(own_end);
                if keep < own_end {
                    self.logs[idx].write().truncate_to(keep)?;
                    st.ends[idx] = keep;
                }
                st.isr[idx] = false;
            }
        }
        drop(st);
        self.appended.notify_all();
        Ok(())
    }

    pub fn stop(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _g = self.state.lock();
        self.appended.notify_all();
        self.hw_changed.notify_all();
    }

    /// Push-replication loop: copies leader records to every live follower,
    /// maintains the ISR and advances the high watermark.
    pub fn run_replicator(self: Arc<Self>) {
        while !self.shutdown.load(Ordering::Relaxed) {
            let mut st = self.state.lock();
            let Some(leader) = st.leader else {
                self.appended.wait_for(&mut st, REPLICATOR_TICK);
                continue;
            };
            let leader_end = st.ends[leader];
            let epoch = st.epoch;
            let now = Instant::now();
            let mut targets = Vec::new();
            for i in 0..self.replicas.len() {
                if i == leader || !st.alive[i] {
                    continue;
                }
                if st.ends[i] < leader_end {
                    targets.push((i, st.ends[i]));
                } else {
                    st.last_caught_up[i] = now;
                    if !st.isr[i] {
                        st.isr[i] = true;
                    }
                }
            }
            let mut changed = false;
            for i in 0..self.replicas.len() {
                if i != leader
                    && st.isr[i]
                    && now.duration_since(st.last_caught_up[i]) > self.sync_timeout
                {
                    st.isr[i] = false;
                    changed = true;
                }
            }
            changed |= st.recompute_hw();
            if changed {
                self.hw_changed.notify_all();
            }
            if targets.is_empty() {
                self.appended.wait_for(&mut st, REPLICATOR_TICK);
                continue;
            }
            drop(st);

            for (follower, from) in targets {
                let copied = self.copy_to_follower(leader, follower, from, leader_end);
                let mut st = self.state.lock();
                if st.epoch != epoch || !st.alive[follower] {
                    continue;
                }
                match copied {
                    Ok(end) => {
                        st.ends[follower] = end;
                        if end >= leader_end {
                            st.last_caught_up[follower] = Instant::now();
                            if end >= st.ends[leader] {
                                st.isr[follower] = true;
                            }
                        }
                        if st.recompute_hw() {
                            self.hw_changed.notify_all();
                        }
                    }
                    Err(e) => {
                        log::warn!(
                            "replication of {}/{} to broker {} failed: {e}",
                            self.topic,
                            self.id,
                            self.replicas[follower]
                        );
                    }
                }
            }
        }
    }

    fn copy_to_follower(
        &self,
        leader: usize,
        follower: usize,
        from: u64,
        until: u64,
    ) -> Result<u64> {
        let mut next = from;
        while next < until {
            let (records, leader_start) = {
                let log = self.logs[leader].read();
                let start = log.start_offset();
                if next < start {
                    (Vec::new(), start)
                } else {
                    let recs = log.read(next, until, REPLICATION_CHUNK, REPLICATION_CHUNK_BYTES)?;
                    (recs, start)
                }
            };
            let mut flog = self.logs[follower].write();
            if next < leader_start {
                flog.reset_to(leader_start)?;
                next = leader_start;
                continue;
            }
            if records.is_empty() {
                break;
            }
            if flog.end_offset() != next {
                // the follower was truncated concurrently; let the next pass retry
                return Ok(flog.end_offset());
            }
            for r in &records {
                flog.append_replica(r)?;
            }
            next = flog.end_offset();
        }
        Ok(next)
    }

    /// Applies records pushed from a leader over the wire.
    pub fn apply_replicated(&self, broker: BrokerId, records: &[Record]) -> Result<u64> {
        let idx = self
            .replica_index(broker)
            .ok_or(BrokerError::UnknownBroker(broker))?;
        let mut log = self.logs[idx].write();
        for r in records {
            if r.offset < log.end_offset() {
                continue;
            }
            log.append_replica(r)?;
        }
        let end = log.end_offset();
        drop(log);
        let mut st = self.state.lock();
        st.ends[idx] = end;
        if st.recompute_hw() {
            self.hw_changed.notify_all();
        }
        Ok(end)
    }
}
