//! An event fabric: a partitioned, replicated log broker with a binary data
//! plane, an HTTP control plane with per-topic ACLs, pattern-filtered
//! triggers with lag-based autoscaling, a producer/consumer SDK, an edge
//! aggregator, and a benchmark harness.

pub mod aggregator;
pub mod bench;
pub mod broker;
pub mod cli;
pub mod client;
pub mod clock;
pub mod control;
pub mod demo;
pub mod fabric;
pub mod pattern;
pub mod protocol;
pub mod trigger;

pub use broker::{Acks, Cluster, ClusterConfig, Permission, Record, TopicSpec};
pub use clock::{Clock, ManualClock, SystemClock};
pub use fabric::{Fabric, FabricConfig};
