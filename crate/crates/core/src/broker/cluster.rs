use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::log::LogConfig;
use super::metadata::{DataKey, Metadata};
use super::offsets::{GroupKey, OffsetStore, OFFSETS_TOPIC};
use super::partition::Partition;
use super::ratelimit::RateLimiter;
use super::topic::{is_internal, valid_topic_name};
use super::{
    Acks, Appended, BrokerError, BrokerId, LeaderHint, OffsetTarget, Permission, Principal, Record,
    Result, RoundRobin, TopicSpec, AUDIT_TOPIC,
};
use crate::clock::{self, SharedClock};

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub data_dir: PathBuf,
    pub brokers: u32,
    pub log: LogConfig,
    /// A follower that has not caught up for this long leaves the ISR.
    pub sync_timeout: Duration,
    /// How long an acks=ALL append waits for the ISR before failing.
    pub ack_timeout: Duration,
    /// Zero disables heartbeat-based failure detection.
    pub heartbeat_interval: Duration,
    pub heartbeat_misses: u32,
    pub offsets_partitions: u32,
    pub offsets_compact_threshold: u64,
    /// Optional per-broker produce capacity (bytes/s), modelling the
    /// resources of one broker host.
    pub broker_ingress_bytes_per_sec: Option<u64>,
    pub clock: SharedClock,
}

impl ClusterConfig {
    pub fn new(data_dir: impl Into<PathBuf>, brokers: u32) -> Self {
        Self {
            data_dir: data_dir.into(),
            brokers,
            log: LogConfig::default(),
            sync_timeout: Duration::from_secs(2),
            ack_timeout: Duration::from_millis(1500),
            heartbeat_interval: Duration::from_secs(1),
            heartbeat_misses: 3,
            offsets_partitions: 8,
            offsets_compact_threshold: 100_000,
            broker_ingress_bytes_per_sec: None,
            clock: clock::system(),
        }
    }

    pub fn with_clock(mut self, clock: SharedClock) -> Self {
        self.clock = clock;
        self
    }
}

#[derive(Debug)]
struct BrokerNode {
    halted: AtomicBool,
    heartbeat_suspended: AtomicBool,
    last_heartbeat: Mutex<Instant>,
    addr: RwLock<Option<SocketAddr>>,
    limiter: Option<RateLimiter>,
}

#[derive(Debug)]
struct Inner {
    config: ClusterConfig,
    brokers: Vec<BrokerNode>,
    metadata: Metadata,
    partitions: RwLock<HashMap<String, Vec<Arc<Partition>>>>,
    offsets: OffsetStore,
    topic_lock: Mutex<()>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    shutdown: AtomicBool,
    round_robin: RoundRobin,
}

/// Snapshot of one partition's replication state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionInfo {
    pub topic: String,
    pub partition: u32,
    pub replica_brokers: Vec<BrokerId>,
    pub leader: Option<BrokerId>,
    pub isr: Vec<BrokerId>,
    pub high_watermark: u64,
    pub log_start: u64,
    pub log_end: u64,
}

/// Handle to the in-process cluster. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Cluster {
    inner: Arc<Inner>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for parts in self.partitions.read().values() {
            for p in parts {
                p.stop();
            }
        }
        let me = thread::current().id();
        for h in self.threads.lock().drain(..) {
            if h.thread().id() != me {
                let _ = h.join();
            }
        }
    }
}

impl Cluster {
    pub fn open(config: ClusterConfig) -> Result<Self> {
        if config.brokers == 0 {
            return Err(BrokerError::InvalidSpec(
                "cluster needs at least one broker".into(),
            ));
        }
        std::fs::create_dir_all(&config.data_dir)?;
        let metadata = Metadata::open(config.data_dir.join("metadata.json"))?;
        let now = Instant::now();
        let brokers = (0..config.brokers)
            .map(|_| BrokerNode {
                halted: AtomicBool::new(false),
                heartbeat_suspended: AtomicBool::new(false),
                last_heartbeat: Mutex::new(now),
                addr: RwLock::new(None),
                limiter: config.broker_ingress_bytes_per_sec.map(RateLimiter::new),
            })
            .collect();
        let offsets = OffsetStore::new(
            config.offsets_partitions.max(1),
            config.offsets_compact_threshold,
        );
        let inner = Arc::new(Inner {
            config,
            brokers,
            metadata,
            partitions: RwLock::new(HashMap::new()),
            offsets,
            topic_lock: Mutex::new(()),
            threads: Mutex::new(Vec::new()),
            shutdown: AtomicBool::new(false),
            round_robin: RoundRobin::default(),
        });
        let cluster = Cluster { inner };

        let assignments = cluster.inner.metadata.read(|m| m.assignments.clone());
        for (topic, parts) in assignments {
            for (id, replicas) in parts.into_iter().enumerate() {
                cluster.open_partition(&topic, id as u32, replicas)?;
            }
        }
        let rf = cluster.broker_count().min(2);
        if cluster.topic(OFFSETS_TOPIC).is_none() {
            let spec = TopicSpec::new(
                OFFSETS_TOPIC,
                cluster.inner.config.offsets_partitions.max(1),
                rf,
            )
            .with_retention(i64::MAX);
            cluster.create_topic_unchecked(spec, "")?;
        }
        if cluster.topic(AUDIT_TOPIC).is_none() {
            cluster.create_topic_unchecked(TopicSpec::new(AUDIT_TOPIC, 1, rf), "")?;
        }
        cluster.replay_offsets()?;
        cluster.start_heartbeats();
        Ok(cluster)
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.inner.config
    }

    pub fn clock(&self) -> &SharedClock {
        &self.inner.config.clock
    }

    pub fn broker_count(&self) -> u32 {
        self.inner.brokers.len() as u32
    }

    pub fn broker_ids(&self) -> Vec<BrokerId> {
        (0..self.broker_count()).collect()
    }

    fn node(&self, id: BrokerId) -> Result<&BrokerNode> {
        self.inner
            .brokers
            .get(id as usize)
            .ok_or(BrokerError::UnknownBroker(id))
    }

    pub fn set_broker_addr(&self, id: BrokerId, addr: SocketAddr) -> Result<()> {
        *self.node(id)?.addr.write() = Some(addr);
        Ok(())
    }

    pub fn broker_addr(&self, id: BrokerId) -> Option<SocketAddr> {
        self.node(id).ok().and_then(|n| *n.addr.read())
    }

    pub fn broker_addrs(&self) -> Vec<SocketAddr> {
        self.inner
            .brokers
            .iter()
            .filter_map(|n| *n.addr.read())
            .collect()
    }

    pub fn is_halted(&self, id: BrokerId) -> bool {
        self.node(id)
            .map(|n| n.halted.load(Ordering::SeqCst))
            .unwrap_or(true)
    }

    fn spawn(&self, name: String, f: impl FnOnce() + Send + 'static) {
        let handle = thread::Builder::new()
            .name(name)
            .spawn(f)
            .expect("spawn thread");
        self.inner.threads.lock().push(handle);
    }

    fn open_partition(
        &self,
        topic: &str,
        id: u32,
        replicas: Vec<BrokerId>,
    ) -> Result<Arc<Partition>> {
        let cfg = &self.inner.config;
        let part = Arc::new(Partition::open(
            &cfg.data_dir,
            topic,
            id,
            replicas,
            cfg.log,
            cfg.sync_timeout,
        )?);
        // a broker halted before this partition existed
        for b in part.replicas.clone() {
            if self.is_halted(b) {
                part.on_broker_halted(b)?;
            }
        }
        if part.replicas.len() > 1 {
            let p = part.clone();
            self.spawn(format!("repl-{topic}-{id}"), move || p.run_replicator());
        }
        let mut parts = self.inner.partitions.write();
        let list = parts.entry(topic.to_string()).or_default();
        debug_assert_eq!(list.len(), id as usize);
        list.push(part.clone());
        Ok(part)
    }

    fn place(&self, cursor: u32, rf: u32) -> Vec<BrokerId> {
        let n = self.broker_count();
        (0..rf).map(|k| (cursor + k) % n).collect()
    }

    /// Registers a topic with empty partitions placed round-robin across
    /// brokers and grants the owner READ, WRITE and DESCRIBE.
    pub fn create_topic(&self, spec: TopicSpec, owner: &str) -> Result<TopicSpec> {
        if is_internal(&spec.name) {
            return Err(BrokerError::InvalidName(spec.name));
        }
        self.create_topic_unchecked(spec, owner)
    }

    fn create_topic_unchecked(&self, mut spec: TopicSpec, owner: &str) -> Result<TopicSpec> {
        if !valid_topic_name(&spec.name) {
            return Err(BrokerError::InvalidName(spec.name));
        }
        if spec.partitions == 0 {
            return Err(BrokerError::InvalidSpec("partitions must be >= 1".into()));
        }
        if spec.replication_factor == 0 {
            return Err(BrokerError::InvalidSpec(
                "replication_factor must be >= 1".into(),
            ));
        }
        if spec.replication_factor > self.broker_count() {
            return Err(BrokerError::ReplicationUnsatisfiable {
                requested: spec.replication_factor,
                brokers: self.broker_count(),
            });
        }
        if spec.retention_ms <= 0 {
            return Err(BrokerError::InvalidSpec("retention_ms must be > 0".into()));
        }
        let _guard = self.inner.topic_lock.lock();
        spec.owner = owner.to_string();
        spec.grants.clear();
        if !owner.is_empty() {
            for p in Permission::ALL {
                spec.grant(owner, p);
            }
        }
        let name = spec.name.clone();
        let assignment = self.inner.metadata.write(|m| {
            if m.topics.contains_key(&name) {
                return Err(BrokerError::DuplicateTopic(name.clone()));
            }
            let n = self.broker_count();
            let mut parts = Vec::new();
            for p in 0..spec.partitions {
                parts.push(self.place((m.placement_cursor + p) % n, spec.replication_factor));
            }
            m.placement_cursor = (m.placement_cursor + spec.partitions) % n;
            m.topics.insert(name.clone(), spec.clone());
            m.assignments.insert(name.clone(), parts.clone());
            Ok(parts)
        })?;
        for (id, replicas) in assignment.into_iter().enumerate() {
            self.open_partition(&name, id as u32, replicas)?;
        }
        Ok(spec)
    }

    pub fn topic(&self, name: &str) -> Option<TopicSpec> {
        self.inner.metadata.read(|m| m.topics.get(name).cloned())
    }

    /// All user-visible topics.
    pub fn topics(&self) -> Vec<TopicSpec> {
        self.inner.metadata.read(|m| {
            m.topics
                .values()
                .filter(|t| !is_internal(&t.name))
                .cloned()
                .collect()
        })
    }

    /// Creates an internal sibling topic (e.g. a dead-letter topic) if
    /// missing, copying partitions, replication and grants from `source`.
    pub fn ensure_sibling_topic(&self, source: &TopicSpec, name: &str) -> Result<TopicSpec> {
        if let Some(t) = self.topic(name) {
            return Ok(t);
        }
        let spec = TopicSpec::new(name, source.partitions, source.replication_factor)
            .with_retention(source.retention_ms);
        match self.create_topic_unchecked(spec, &source.owner) {
            Ok(_) | Err(BrokerError::DuplicateTopic(_)) => {}
            Err(e) => return Err(e),
        }
        let grants = source.grants.clone();
        self.inner.metadata.write(|m| {
            if let Some(t) = m.topics.get_mut(name) {
                t.grants.extend(grants);
            }
            Ok::<_, BrokerError>(())
        })?;
        self.topic(name)
            .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))
    }

    pub fn set_retention(&self, name: &str, retention_ms: i64) -> Result<TopicSpec> {
        if retention_ms <= 0 {
            return Err(BrokerError::InvalidSpec("retention_ms must be > 0".into()));
        }
        self.inner.metadata.write(|m| {
            let t = m
                .topics
                .get_mut(name)
                .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))?;
            t.retention_ms = retention_ms;
            Ok(t.clone())
        })
    }

    /// Raises the partition count. Existing records are not moved; only
    /// future keyed appends see the new count.
    pub fn add_partitions(&self, name: &str, partitions: u32) -> Result<TopicSpec> {
        let _guard = self.inner.topic_lock.lock();
        let (spec, new_parts, start) = self.inner.metadata.write(|m| {
            let spec = m
                .topics
                .get(name)
                .cloned()
                .ok_or_else(|| BrokerError::UnknownTopic(name.to_string()))?;
            if partitions < spec.partitions {
                return Err(BrokerError::InvalidSpec(format!(
                    "partition count may only increase ({} -> {partitions})",
                    spec.partitions
                )));
            }
            let n = self.broker_count();
            let mut added = Vec::new();
            for p in spec.partitions..partitions {
                let _ = p;
                added.push(self.place(m.placement_cursor % n, spec.replication_factor));
                m.placement_cursor = (m.placement_cursor + 1) % n;
            }
            let t = m.topics.get_mut(name).unwrap();
            let start = t.partitions;
            t.partitions = partitions;
            m.assignments.get_mut(name).unwrap().extend(added.clone());
            Ok((t.clone(), added, start))
        })?;
        for (i, replicas) in new_parts.into_iter().enumerate() {
            self.open_partition(name, start + i as u32, replicas)?;
        }
        Ok(spec)
    }

    /// Adds or removes a grant.
    pub fn set_grant(
        &self,
        topic: &str,
        identity: &str,
        permission: Permission,
        revoke: bool,
    ) -> Result<TopicSpec> {
        self.inner.metadata.write(|m| {
            let t = m
                .topics
                .get_mut(topic)
                .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
            if revoke {
                t.revoke(identity, permission);
            } else {
                t.grant(identity, permission);
            }
            Ok(t.clone())
        })
    }

    pub fn register_key(&self, key: DataKey) -> Result<()> {
        self.inner.metadata.write(|m| {
            m.keys.insert(key.key_id.clone(), key);
            Ok::<_, BrokerError>(())
        })
    }

    pub fn data_key(&self, key_id: &str) -> Option<DataKey> {
        self.inner.metadata.read(|m| m.keys.get(key_id).cloned())
    }

    /// ACL check. Identities never reach internal topics.
    pub fn authorize(
        &self,
        principal: &Principal,
        topic: &str,
        permission: Permission,
    ) -> Result<TopicSpec> {
        let spec = self
            .topic(topic)
            .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
        match principal {
            Principal::Internal => Ok(spec),
            Principal::Identity(id) => {
                if !is_internal(topic) && spec.allows(id, permission) {
                    Ok(spec)
                } else {
                    Err(BrokerError::Unauthorized {
                        principal: id.clone(),
                        topic: topic.to_string(),
                        permission,
                    })
                }
            }
        }
    }

    pub fn authorize_any(
        &self,
        principal: &Principal,
        topic: &str,
        perms: &[Permission],
    ) -> Result<TopicSpec> {
        let mut last = None;
        for p in perms {
            match self.authorize(principal, topic, *p) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one permission"))
    }

    fn partition(&self, topic: &str, partition: i64) -> Result<Arc<Partition>> {
        let parts = self.inner.partitions.read();
        let list = parts
            .get(topic)
            .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
        usize::try_from(partition)
            .ok()
            .and_then(|i| list.get(i).cloned())
            .ok_or_else(|| BrokerError::UnknownPartition {
                topic: topic.to_string(),
                partition,
            })
    }

    fn with_leader_addr(&self, err: BrokerError) -> BrokerError {
        match err {
            BrokerError::NotLeader {
                partition,
                leader: Some(hint),
            } => BrokerError::NotLeader {
                partition,
                leader: Some(LeaderHint {
                    broker: hint.broker,
                    addr: self.broker_addr(hint.broker),
                }),
            },
            other => other,
        }
    }

    /// Resolves the target partition: explicit, key-routed, or round-robin
    /// for empty keys.
    pub fn route(
        &self,
        spec: &TopicSpec,
        partition: Option<u32>,
        key: &[u8],
        rr: &RoundRobin,
    ) -> u32 {
        partition.unwrap_or_else(|| rr.route(key, spec.partitions))
    }

    /// In-process append through the current leader.
    pub fn append(
        &self,
        principal: &Principal,
        topic: &str,
        partition: Option<u32>,
        key: &[u8],
        value: &[u8],
        acks: Acks,
    ) -> Result<Appended> {
        self.append_on(
            None,
            &self.inner.round_robin,
            principal,
            topic,
            partition,
            key,
            value,
            acks,
        )
    }

    /// Append as received by broker `via` (`None` = route to the leader).
    #[allow(clippy::too_many_arguments)]
    pub fn append_on(
        &self,
        via: Option<BrokerId>,
        rr: &RoundRobin,
        principal: &Principal,
        topic: &str,
        partition: Option<u32>,
        key: &[u8],
        value: &[u8],
        acks: Acks,
    ) -> Result<Appended> {
        let spec = self.authorize(principal, topic, Permission::Write)?;
        let pid = self.route(&spec, partition, key, rr);
        let part = self.partition(topic, i64::from(pid))?;
        if let Some(b) = via {
            if self.is_halted(b) {
                return Err(BrokerError::NoLeader);
            }
        }
        let leader = part.leader_broker().ok_or(BrokerError::NoLeader)?;
        if let (Some(limiter), false) = (&self.node(leader)?.limiter, is_internal(topic)) {
            limiter.acquire(key.len() + value.len());
        }
        let now = self.inner.config.clock.now_ms();
        let (offset, ts, epoch) = part
            .append_leader(via, now, key, value)
            .map_err(|e| self.with_leader_addr(e))?;
        match acks {
            Acks::None => Ok(Appended {
                partition: pid,
                offset: None,
                timestamp: ts,
            }),
            Acks::Leader => Ok(Appended {
                partition: pid,
                offset: Some(offset),
                timestamp: ts,
            }),
            Acks::All => {
                part.await_replicated(offset, epoch, self.inner.config.ack_timeout)
                    .map_err(|e| self.with_leader_addr(e))?;
                Ok(Appended {
                    partition: pid,
                    offset: Some(offset),
                    timestamp: ts,
                })
            }
        }
    }

    /// Committed-read fetch through the current leader.
    pub fn fetch(
        &self,
        principal: &Principal,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: usize,
        max_bytes: usize,
    ) -> Result<Vec<Record>> {
        self.fetch_on(
            None,
            principal,
            topic,
            partition,
            from_offset,
            max_records,
            max_bytes,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn fetch_on(
        &self,
        via: Option<BrokerId>,
        principal: &Principal,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: usize,
        max_bytes: usize,
    ) -> Result<Vec<Record>> {
        self.authorize(principal, topic, Permission::Read)?;
        let part = self.partition(topic, i64::from(partition))?;
        let (leader, _) = part
            .current_leader(via)
            .map_err(|e| self.with_leader_addr(e))?;
        let hw = part.high_watermark();
        let log = part.logs[leader].read();
        let (start, end) = (log.start_offset(), log.end_offset());
        if from_offset < start || from_offset > end {
            return Err(BrokerError::OffsetOutOfRange {
                offset: from_offset as i64,
                earliest: start,
                latest: end,
            });
        }
        Ok(log.read(from_offset, hw, max_records, max_bytes)?)
    }

    /// Blocks until a record at or beyond `offset` becomes readable.
    pub fn wait_for_data(
        &self,
        topic: &str,
        partition: u32,
        offset: u64,
        timeout: Duration,
    ) -> bool {
        match self.partition(topic, i64::from(partition)) {
            Ok(p) => p.wait_for_data(offset, timeout),
            Err(_) => false,
        }
    }

    pub fn lookup_offset(
        &self,
        principal: &Principal,
        topic: &str,
        partition: u32,
        target: OffsetTarget,
    ) -> Result<u64> {
        self.authorize_any(principal, topic, &[Permission::Read, Permission::Describe])?;
        let part = self.partition(topic, i64::from(partition))?;
        let (leader, _) = part.current_leader(None)?;
        let log = part.logs[leader].read();
        Ok(match target {
            OffsetTarget::Earliest => log.start_offset(),
            OffsetTarget::Latest => log.end_offset(),
            OffsetTarget::Timestamp(ts) => log.offset_for_timestamp(ts).unwrap_or(log.end_offset()),
        })
    }

    /// Current leader of every partition of `topic`.
    pub fn partition_leaders(&self, topic: &str) -> Result<Vec<Option<BrokerId>>> {
        let parts = self.inner.partitions.read();
        let list = parts
            .get(topic)
            .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
        Ok(list.iter().map(|p| p.leader_broker()).collect())
    }

    /// (earliest, latest) where latest is the next offset to be assigned.
    pub fn offset_range(&self, topic: &str, partition: u32) -> Result<(u64, u64)> {
        let part = self.partition(topic, i64::from(partition))?;
        let (leader, _) = part.current_leader(None)?;
        let log = part.logs[leader].read();
        Ok((log.start_offset(), log.end_offset()))
    }

    pub fn partition_info(&self, topic: &str, partition: u32) -> Result<PartitionInfo> {
        let part = self.partition(topic, i64::from(partition))?;
        let st = part.state.lock();
        let (log_start, log_end) = match st.leader {
            Some(l) => {
                let log = part.logs[l].read();
                (log.start_offset(), log.end_offset())
            }
            None => (0, 0),
        };
        Ok(PartitionInfo {
            topic: topic.to_string(),
            partition,
            replica_brokers: part.replicas.clone(),
            leader: st.leader.map(|i| part.replicas[i]),
            isr: (0..part.replicas.len())
                .filter(|&i| st.isr[i] && st.alive[i])
                .map(|i| part.replicas[i])
                .collect(),
            high_watermark: st.high_watermark,
            log_start,
            log_end,
        })
    }

    /// Log end offsets of every replica (test and diagnostics surface).
    pub fn replica_ends(&self, topic: &str, partition: u32) -> Result<Vec<u64>> {
        let part = self.partition(topic, i64::from(partition))?;
        let ends = part.logs.iter().map(|l| l.read().end_offset()).collect();
        Ok(ends)
    }

    /// Persists a group's offset in `__offsets` before acknowledging.
    pub fn commit_offset(
        &self,
        principal: &Principal,
        group: &str,
        topic: &str,
        partition: u32,
        offset: u64,
    ) -> Result<()> {
        self.authorize(principal, topic, Permission::Read)?;
        let (earliest, latest) = self.offset_range(topic, partition)?;
        if offset < earliest || offset > latest {
            return Err(BrokerError::OffsetOutOfRange {
                offset: offset as i64,
                earliest,
                latest,
            });
        }
        let key = GroupKey {
            group: group.to_string(),
            topic: topic.to_string(),
            partition,
        };
        let store = &self.inner.offsets;
        let op = store.partition_for(group);
        let _guard = store.locks[op as usize].lock();
        let internal = Principal::Internal;
        self.append(
            &internal,
            OFFSETS_TOPIC,
            Some(op),
            &key.encode(),
            &offset.to_be_bytes(),
            Acks::All,
        )?;
        store.committed.write().insert(key, offset);
        self.maybe_compact_offsets(op)?;
        Ok(())
    }

    pub fn committed_offset(
        &self,
        principal: &Principal,
        group: &str,
        topic: &str,
        partition: u32,
    ) -> Result<Option<u64>> {
        self.authorize(principal, topic, Permission::Read)?;
        self.partition(topic, i64::from(partition))?;
        let key = GroupKey {
            group: group.to_string(),
            topic: topic.to_string(),
            partition,
        };
        Ok(self.inner.offsets.committed.read().get(&key).copied())
    }

    fn maybe_compact_offsets(&self, op: u32) -> Result<()> {
        let part = self.partition(OFFSETS_TOPIC, i64::from(op))?;
        let (start, end) = self.offset_range(OFFSETS_TOPIC, op)?;
        if end - start <= self.inner.offsets.compact_threshold {
            return Ok(());
        }
        let live: Vec<(GroupKey, u64)> = {
            let map = self.inner.offsets.committed.read();
            map.iter()
                .filter(|(k, _)| self.inner.offsets.partition_for(&k.group) == op)
                .map(|(k, v)| (k.clone(), *v))
                .collect()
        };
        let snapshot_start = end;
        for (k, v) in &live {
            self.append(
                &Principal::Internal,
                OFFSETS_TOPIC,
                Some(op),
                &k.encode(),
                &v.to_be_bytes(),
                Acks::All,
            )?;
        }
        for log in &part.logs {
            log.write().advance_start(snapshot_start)?;
        }
        Ok(())
    }

    fn replay_offsets(&self) -> Result<()> {
        let parts = self
            .inner
            .partitions
            .read()
            .get(OFFSETS_TOPIC)
            .cloned()
            .unwrap_or_default();
        for part in parts {
            let Ok((leader, _)) = part.current_leader(None) else {
                continue;
            };
            let log = part.logs[leader].read();
            let mut next = log.start_offset();
            loop {
                let recs = log.read(next, log.end_offset(), 4096, usize::MAX)?;
                if recs.is_empty() {
                    break;
                }
                for r in &recs {
                    self.inner.offsets.apply(&r.key, &r.value);
                }
                next = recs.last().unwrap().offset + 1;
            }
        }
        Ok(())
    }

    /// Removes records older than each topic's retention from the front of
    /// every replica. Returns the number of leader records purged.
    pub fn enforce_retention(&self, now_ms: i64) -> Result<u64> {
        let topics = self.inner.metadata.read(|m| m.topics.clone());
        let parts = self.inner.partitions.read().clone();
        let mut purged = 0;
        for (name, spec) in topics {
            let cutoff = now_ms.saturating_sub(spec.retention_ms);
            for part in parts.get(&name).into_iter().flatten() {
                let leader = part.state.lock().leader;
                for (i, log) in part.logs.iter().enumerate() {
                    let n = log.write().purge_before(cutoff)?;
                    if Some(i) == leader {
                        purged += n;
                    }
                }
            }
        }
        Ok(purged)
    }

    /// Stops a broker: it rejects all traffic and leadership of every
    /// partition it led moves to the next in-sync replica in declared order.
    pub fn halt_broker(&self, id: BrokerId) -> Result<()> {
        let node = self.node(id)?;
        node.halted.store(true, Ordering::SeqCst);
        let parts: Vec<Arc<Partition>> = self
            .inner
            .partitions
            .read()
            .values()
            .flatten()
            .cloned()
            .collect();
        for p in parts {
            p.on_broker_halted(id)?;
        }
        log::info!("broker {id} halted");
        Ok(())
    }

    pub fn resume_broker(&self, id: BrokerId) -> Result<()> {
        let node = self.node(id)?;
        let parts: Vec<Arc<Partition>> = self
            .inner
            .partitions
            .read()
            .values()
            .flatten()
            .cloned()
            .collect();
        for p in parts {
            p.on_broker_resumed(id)?;
        }
        node.halted.store(false, Ordering::SeqCst);
        node.heartbeat_suspended.store(false, Ordering::SeqCst);
        *node.last_heartbeat.lock() = Instant::now();
        log::info!("broker {id} resumed");
        Ok(())
    }

    /// Stops a broker's heartbeats; the failure detector halts it after the
    /// configured number of missed intervals.
    pub fn suspend_heartbeats(&self, id: BrokerId) -> Result<()> {
        self.node(id)?
            .heartbeat_suspended
            .store(true, Ordering::SeqCst);
        Ok(())
    }

    fn start_heartbeats(&self) {
        let interval = self.inner.config.heartbeat_interval;
        if interval.is_zero() {
            return;
        }
        let weak: Weak<Inner> = Arc::downgrade(&self.inner);
        let misses = self.inner.config.heartbeat_misses.max(1);
        self.spawn("heartbeat-monitor".into(), move || loop {
            let tick = interval.min(Duration::from_millis(200));
            thread::sleep(tick);
            let Some(inner) = weak.upgrade() else { return };
            if inner.shutdown.load(Ordering::SeqCst) {
                return;
            }
            let cluster = Cluster { inner };
            let now = Instant::now();
            for (id, node) in cluster.inner.brokers.iter().enumerate() {
                if node.halted.load(Ordering::SeqCst) {
                    continue;
                }
                if !node.heartbeat_suspended.load(Ordering::SeqCst) {
                    let mut last = node.last_heartbeat.lock();
                    if now.duration_since(*last) >= interval {
                        *last = now;
                    }
                    continue;
                }
                let last = *node.last_heartbeat.lock();
                if now.duration_since(last) > interval * misses {
                    log::warn!("broker {id} missed {misses} heartbeats; failing over");
                    let _ = cluster.halt_broker(id as BrokerId);
                }
            }
            // the monitor must not keep the cluster alive
            drop(cluster);
        });
    }

    /// Applies records pushed by a leader to this broker's replica.
    pub fn apply_replicated(
        &self,
        broker: BrokerId,
        topic: &str,
        partition: u32,
        records: &[Record],
    ) -> Result<u64> {
        if self.is_halted(broker) {
            return Err(BrokerError::NoLeader);
        }
        let part = self.partition(topic, i64::from(partition))?;
        part.apply_replicated(broker, records)
    }

    /// Leader-side read for replica resynchronisation.
    pub fn sync_records(
        &self,
        topic: &str,
        partition: u32,
        from: u64,
        max_records: usize,
    ) -> Result<(u64, Vec<Record>)> {
        let part = self.partition(topic, i64::from(partition))?;
        let (leader, _) = part.current_leader(None)?;
        let hw = part.high_watermark();
        let log = part.logs[leader].read();
        let recs = log.read(
            from.max(log.start_offset()),
            log.end_offset(),
            max_records,
            usize::MAX,
        )?;
        Ok((hw, recs))
    }

    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        for parts in self.inner.partitions.read().values() {
            for p in parts {
                p.stop();
            }
        }
    }

    pub fn is_shutdown(&self) -> bool {
        self.inner.shutdown.load(Ordering::SeqCst)
    }
}
