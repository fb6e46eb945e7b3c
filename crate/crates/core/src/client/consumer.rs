//! Single-threaded consumer over a static partition assignment.

use std::collections::{HashMap, VecDeque};
use std::time::{Duration, Instant};

use super::conn::{self, Connection, TopicRoute};
use super::ClientError;
use crate::broker::{OffsetTarget, Record};
use crate::protocol::codec::{Request, ResponseBody, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPosition {
    Earliest,
    Latest,
    Timestamp(i64),
}

impl StartPosition {
    fn target(self) -> OffsetTarget {
        match self {
            StartPosition::Earliest => OffsetTarget::Earliest,
            StartPosition::Latest => OffsetTarget::Latest,
            StartPosition::Timestamp(t) => OffsetTarget::Timestamp(t),
        }
    }
}

impl std::str::FromStr for StartPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "earliest" => Ok(StartPosition::Earliest),
            "latest" => Ok(StartPosition::Latest),
            ts => ts
                .parse()
                .map(StartPosition::Timestamp)
                .map_err(|_| format!("expected earliest, latest or a timestamp in ms, got {ts:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConsumerConfig {
    pub group_id: Option<String>,
    pub start: StartPosition,
    /// 0 disables auto-commit.
    pub auto_commit_interval_ms: u64,
    pub receive_buffer_bytes: usize,
    pub max_poll_records: usize,
}

impl Default for ConsumerConfig {
    fn default() -> Self {
        Self {
            group_id: None,
            start: StartPosition::Latest,
            auto_commit_interval_ms: 5000,
            receive_buffer_bytes: 2 * 1024 * 1024,
            max_poll_records: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumedRecord {
    pub partition: u32,
    pub record: Record,
}

#[derive(Debug)]
struct PartitionState {
    /// Next offset to hand to the caller.
    position: Option<u64>,
    committed: Option<u64>,
    buffered: VecDeque<Record>,
}

impl PartitionState {
    fn fetch_offset(&self) -> Option<u64> {
        match self.buffered.back() {
            Some(r) => Some(r.offset + 1),
            None => self.position,
        }
    }
}

#[derive(Debug)]
pub struct Consumer {
    bootstrap: Vec<String>,
    key_id: String,
    secret: Vec<u8>,
    topic: String,
    config: ConsumerConfig,
    partitions: Vec<u32>,
    state: HashMap<u32, PartitionState>,
    route: Option<TopicRoute>,
    conns: HashMap<String, Connection>,
    next_rr: usize,
    last_commit: Instant,
}

impl Consumer {
    pub fn new(
        bootstrap: Vec<String>,
        key_id: &str,
        secret: &[u8],
        topic: &str,
        partitions: Vec<u32>,
        config: ConsumerConfig,
    ) -> Result<Self, ClientError> {
        if partitions.is_empty() {
            return Err(ClientError::Config(
                "consumer needs at least one partition".into(),
            ));
        }
        let state = partitions
            .iter()
            .map(|&p| {
                (
                    p,
                    PartitionState {
                        position: None,
                        committed: None,
                        buffered: VecDeque::new(),
                    },
                )
            })
            .collect();
        let mut c = Self {
            bootstrap,
            key_id: key_id.to_string(),
            secret: secret.to_vec(),
            topic: topic.to_string(),
            config,
            partitions,
            state,
            route: None,
            conns: HashMap::new(),
            next_rr: 0,
            last_commit: Instant::now(),
        };
        let route = c.refresh_route()?;
        if let Some(&bad) = c.partitions.iter().find(|&&p| p >= route.partitions()) {
            return Err(ClientError::Config(format!(
                "topic {topic} has no partition {bad}"
            )));
        }
        Ok(c)
    }

    /// Assigns all partitions of `topic`.
    pub fn subscribe_all(
        bootstrap: Vec<String>,
        key_id: &str,
        secret: &[u8],
        topic: &str,
        config: ConsumerConfig,
    ) -> Result<Self, ClientError> {
        let mut c = conn::connect_any(&bootstrap, key_id, secret)?;
        let n = c.metadata(topic)?.partitions();
        Self::new(bootstrap, key_id, secret, topic, (0..n).collect(), config)
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn partitions(&self) -> &[u32] {
        &self.partitions
    }

    /// Position (next offset to be returned) per partition, once known.
    pub fn position(&self, partition: u32) -> Option<u64> {
        self.state.get(&partition).and_then(|s| s.position)
    }

    fn refresh_route(&mut self) -> Result<TopicRoute, ClientError> {
        let mut candidates = self.bootstrap.clone();
        if let Some(r) = &self.route {
            candidates.extend(r.brokers.values().cloned());
        }
        let mut c = conn::connect_any(&candidates, &self.key_id, &self.secret)?;
        let route = c.metadata(&self.topic)?;
        self.conns.entry(c.peer().to_string()).or_insert(c);
        self.route = Some(route.clone());
        Ok(route)
    }

    fn conn_for(&mut self, addr: &str) -> Result<&mut Connection, ClientError> {
        if !self.conns.contains_key(addr) {
            let c = Connection::connect(addr, &self.key_id, &self.secret)?;
            self.conns.insert(addr.to_string(), c);
        }
        Ok(self.conns.get_mut(addr).unwrap())
    }

    /// Any live connection, for requests not tied to a partition leader.
    fn any_conn(&mut self) -> Result<&mut Connection, ClientError> {
        if self.conns.is_empty() {
            let mut candidates = self.bootstrap.clone();
            if let Some(r) = &self.route {
                candidates.extend(r.brokers.values().cloned());
            }
            let c = conn::connect_any(&candidates, &self.key_id, &self.secret)?;
            self.conns.insert(c.peer().to_string(), c);
        }
        Ok(self.conns.values_mut().next().unwrap())
    }

    fn call_any(&mut self, req: &Request) -> Result<crate::protocol::Response, ClientError> {
        let first = self.any_conn()?.call(req);
        match first {
            Ok(r) => Ok(r),
            Err(_) => {
                self.conns.clear();
                self.any_conn()?.call(req)
            }
        }
    }

    fn list_offset(&mut self, partition: u32, target: OffsetTarget) -> Result<u64, ClientError> {
        let req = Request::ListOffsets {
            topic: self.topic.clone(),
            partition: partition as i32,
            target: target.wire(),
        };
        let resp = self.call_any(&req)?;
        match (resp.status, resp.body) {
            (Status::Ok, ResponseBody::ListOffsets { offset }) if offset >= 0 => Ok(offset as u64),
            (s, _) => Err(ClientError::Status(s)),
        }
    }

    fn committed(&mut self, partition: u32) -> Result<Option<u64>, ClientError> {
        let Some(group) = self.config.group_id.clone() else {
            return Ok(None);
        };
        let req = Request::FetchCommitted {
            group,
            topic: self.topic.clone(),
            partition: partition as i32,
        };
        let resp = self.call_any(&req)?;
        match (resp.status, resp.body) {
            (Status::Ok, ResponseBody::FetchCommitted { offset }) => Ok(u64::try_from(offset).ok()),
            (s, _) => Err(ClientError::Status(s)),
        }
    }

    fn init_positions(&mut self) -> Result<(), ClientError> {
        for p in self.partitions.clone() {
            if self.state[&p].position.is_some() {
                continue;
            }
            let committed = self.committed(p)?;
            let pos = match committed {
                Some(o) => o,
                None => self.list_offset(p, self.config.start.target())?,
            };
            let st = self.state.get_mut(&p).unwrap();
            st.position = Some(pos);
            st.committed = committed;
        }
        Ok(())
    }

    /// Returns up to `max_records` (capped by `max_poll_records`),
    /// interleaving partitions round-robin. Waits at most about `timeout`
    /// for data when nothing is buffered.
    pub fn poll(
        &mut self,
        max_records: usize,
        timeout: Duration,
    ) -> Result<Vec<ConsumedRecord>, ClientError> {
        self.maybe_auto_commit()?;
        self.init_positions()?;
        let max = max_records.min(self.config.max_poll_records).max(1);
        let deadline = Instant::now() + timeout;
        loop {
            let buffered: usize = self.state.values().map(|s| s.buffered.len()).sum();
            if buffered < max {
                self.fill(max - buffered)?;
            }
            let out = self.drain(max);
            if !out.is_empty() || Instant::now() >= deadline {
                return Ok(out);
            }
        }
    }

    /// Pipelines one FETCH per partition, grouped by leader connection.
    fn fill(&mut self, wanted: usize) -> Result<(), ClientError> {
        let route = match &self.route {
            Some(r) => r.clone(),
            None => self.refresh_route()?,
        };
        let per_partition = wanted.div_ceil(self.partitions.len()).max(1);
        let max_bytes = (self.config.receive_buffer_bytes / self.partitions.len()).max(64 * 1024);
        let mut by_leader: HashMap<String, Vec<u32>> = HashMap::new();
        let mut stale = false;
        for &p in &self.partitions {
            match route.leader_addr(p) {
                Some(a) => by_leader.entry(a.to_string()).or_default().push(p),
                None => stale = true,
            }
        }
        for (addr, parts) in by_leader {
            let reqs: Vec<Request> = parts
                .iter()
                .map(|&p| Request::Fetch {
                    topic: self.topic.clone(),
                    partition: p as i32,
                    offset: self.state[&p].fetch_offset().unwrap_or(0) as i64,
                    max_records: per_partition as u32,
                    max_bytes: max_bytes as u32,
                })
                .collect();
            let result = (|| -> Result<Vec<_>, ClientError> {
                let c = self.conn_for(&addr)?;
                for r in &reqs {
                    c.send(r)?;
                }
                c.flush()?;
                reqs.iter().map(|_| c.recv()).collect()
            })();
            let responses = match result {
                Ok(r) => r,
                Err(ClientError::Status(s)) => return Err(ClientError::Status(s)),
                Err(e) => {
                    log::debug!("fetch from {addr} failed: {e}");
                    self.conns.remove(&addr);
                    stale = true;
                    continue;
                }
            };
            for (p, resp) in parts.into_iter().zip(responses) {
                match (resp.status, resp.body) {
                    (Status::Ok, ResponseBody::Fetch { records }) => {
                        let st = self.state.get_mut(&p).unwrap();
                        for r in records {
                            if Some(r.offset) >= st.fetch_offset() {
                                st.buffered.push_back(r);
                            }
                        }
                    }
                    (Status::OffsetOutOfRange, _) => {
                        let earliest = self.list_offset(p, OffsetTarget::Earliest)?;
                        log::warn!(
                            "{}/{p}: position out of range, resetting to {earliest}",
                            self.topic
                        );
                        let st = self.state.get_mut(&p).unwrap();
                        st.buffered.clear();
                        st.position = Some(earliest);
                    }
                    (s, _) if s.is_retriable() => stale = true,
                    (s, _) => return Err(ClientError::Status(s)),
                }
            }
        }
        if stale {
            std::thread::sleep(Duration::from_millis(50));
            self.route = None;
            let _ = self.refresh_route();
        }
        Ok(())
    }

    fn drain(&mut self, max: usize) -> Vec<ConsumedRecord> {
        let mut out = Vec::new();
        let n = self.partitions.len();
        let mut empty_rounds = 0;
        while out.len() < max && empty_rounds < n {
            let p = self.partitions[self.next_rr % n];
            self.next_rr = self.next_rr.wrapping_add(1);
            let st = self.state.get_mut(&p).unwrap();
            match st.buffered.pop_front() {
                Some(r) => {
                    empty_rounds = 0;
                    st.position = Some(r.offset + 1);
                    out.push(ConsumedRecord {
                        partition: p,
                        record: r,
                    });
                }
                None => empty_rounds += 1,
            }
        }
        out
    }

    fn maybe_auto_commit(&mut self) -> Result<(), ClientError> {
        let interval = self.config.auto_commit_interval_ms;
        if interval == 0 || self.config.group_id.is_none() {
            return Ok(());
        }
        if self.last_commit.elapsed() >= Duration::from_millis(interval) {
            self.commit_sync()?;
        }
        Ok(())
    }

    /// Commits the position of every partition that advanced since the last
    /// commit. Positions only cover records already returned by `poll`.
    pub fn commit_sync(&mut self) -> Result<(), ClientError> {
        let Some(group) = self.config.group_id.clone() else {
            return Err(ClientError::Config("commit requires a group_id".into()));
        };
        self.last_commit = Instant::now();
        for p in self.partitions.clone() {
            let st = &self.state[&p];
            let Some(pos) = st.position else { continue };
            if st.committed == Some(pos) {
                continue;
            }
            let req = Request::Commit {
                group: group.clone(),
                topic: self.topic.clone(),
                partition: p as i32,
                offset: pos as i64,
            };
            let resp = self.call_any(&req)?;
            if resp.status != Status::Ok {
                return Err(ClientError::Status(resp.status));
            }
            self.state.get_mut(&p).unwrap().committed = Some(pos);
        }
        Ok(())
    }

    /// Moves the position of `partition`, dropping buffered records.
    pub fn seek(&mut self, partition: u32, offset: u64) -> Result<(), ClientError> {
        let st = self
            .state
            .get_mut(&partition)
            .ok_or_else(|| ClientError::Config(format!("partition {partition} not assigned")))?;
        st.buffered.clear();
        st.position = Some(offset);
        Ok(())
    }
}
