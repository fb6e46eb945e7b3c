//! Broker core: an in-process cluster of logical brokers hosting
//! partitioned, replicated, append-only logs with committed-read fetches,
//! consumer group offsets, retention, and acknowledgment levels.

mod cluster;
pub mod log;
mod metadata;
mod offsets;
mod partition;
mod ratelimit;
mod record;
pub mod routing;
pub mod segment;
mod topic;

use std::fmt;
use std::net::SocketAddr;

pub use cluster::{Cluster, ClusterConfig, PartitionInfo};
pub use metadata::DataKey;
pub use offsets::OFFSETS_TOPIC;
pub use record::Record;
pub use routing::{fnv1a64, partition_for_key, RoundRobin};
pub use topic::{
    is_internal, valid_topic_name, Grant, Permission, TopicSpec, DEFAULT_RETENTION_MS,
};

pub type BrokerId = u32;

pub const AUDIT_TOPIC: &str = "__audit";

/// Who is performing a broker operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Principal {
    /// Fabric-internal services (trigger engine, replication, audit). Not
    /// subject to topic ACLs.
    Internal,
    Identity(String),
}

impl Principal {
    pub fn identity(id: impl Into<String>) -> Self {
        Principal::Identity(id.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Acks {
    #[serde(rename = "0")]
    None,
    #[serde(rename = "1")]
    Leader,
    #[serde(rename = "all")]
    All,
}

impl Acks {
    pub fn wire(self) -> u8 {
        match self {
            Acks::None => 0,
            Acks::Leader => 1,
            Acks::All => 255,
        }
    }

    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            0 => Some(Acks::None),
            1 => Some(Acks::Leader),
            255 => Some(Acks::All),
            _ => None,
        }
    }
}

impl fmt::Display for Acks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Acks::None => "0",
            Acks::Leader => "1",
            Acks::All => "all",
        })
    }
}

impl std::str::FromStr for Acks {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "0" | "none" => Ok(Acks::None),
            "1" | "leader" => Ok(Acks::Leader),
            "all" | "-1" | "255" => Ok(Acks::All),
            other => Err(format!("invalid acks {other:?} (expected 0, 1 or all)")),
        }
    }
}

/// Offset lookup target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetTarget {
    Earliest,
    Latest,
    Timestamp(i64),
}

impl OffsetTarget {
    /// Wire form: -2 earliest, -1 latest, otherwise a timestamp.
    pub fn from_wire(v: i64) -> Self {
        match v {
            -2 => OffsetTarget::Earliest,
            -1 => OffsetTarget::Latest,
            ts => OffsetTarget::Timestamp(ts),
        }
    }

    pub fn wire(self) -> i64 {
        match self {
            OffsetTarget::Earliest => -2,
            OffsetTarget::Latest => -1,
            OffsetTarget::Timestamp(ts) => ts,
        }
    }
}

/// Result of an append. `offset` is `None` for fire-and-forget appends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Appended {
    pub partition: u32,
    pub offset: Option<u64>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderHint {
    pub broker: BrokerId,
    pub addr: Option<SocketAddr>,
}

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("topic {0:?} already exists")]
    DuplicateTopic(String),
    #[error("invalid topic name {0:?}")]
    InvalidName(String),
    #[error("replication factor {requested} exceeds cluster size {brokers}")]
    ReplicationUnsatisfiable { requested: u32, brokers: u32 },
    #[error("invalid topic configuration: {0}")]
    InvalidSpec(String),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("unknown partition {topic}/{partition}")]
    UnknownPartition { topic: String, partition: i64 },
    #[error("unknown broker {0}")]
    UnknownBroker(BrokerId),
    #[error("{principal} lacks {permission} on {topic:?}")]
    Unauthorized {
        principal: String,
        topic: String,
        permission: Permission,
    },
    #[error("broker is not the leader for this partition")]
    NotLeader {
        partition: u32,
        leader: Option<LeaderHint>,
    },
    #[error("partition has no live leader")]
    NoLeader,
    #[error("timed out waiting for in-sync replicas")]
    ReplicationTimeout,
    #[error("offset {offset} out of range [{earliest}, {latest}]")]
    OffsetOutOfRange {
        offset: i64,
        earliest: u64,
        latest: u64,
    },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error("broker is shutting down")]
    Shutdown,
}

pub type Result<T, E = BrokerError> = std::result::Result<T, E>;
