use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::broker::Acks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Producers (and optionally consumers) over a fixed topic layout.
    Throughput,
    AcksSweep,
    ConsumerVsProducer,
    TriggerScaling,
    PartitionScaling,
    Multitenancy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    #[serde(default = "d_brokers")]
    pub brokers: u32,
    /// Per-broker ingress cap in bytes/s, standing in for host resources.
    #[serde(default)]
    pub broker_ingress_bytes_per_sec: Option<u64>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicsSection {
    #[serde(default = "d_one")]
    pub count: u32,
    #[serde(default = "d_one")]
    pub partitions: u32,
    #[serde(default = "d_one")]
    pub replication_factor: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducersSection {
    #[serde(default = "d_one")]
    pub count: u32,
    #[serde(default = "d_event_size")]
    pub event_size_bytes: usize,
    #[serde(default = "d_acks", with = "acks_str")]
    pub acks: Acks,
    #[serde(default = "d_events")]
    pub events_per_producer: u64,
    /// Time-bounded mode: send until this elapses instead of a fixed count.
    #[serde(default)]
    pub duration_secs: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumersSection {
    #[serde(default)]
    pub count: u32,
    #[serde(default = "d_start")]
    pub start: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    #[serde(default = "d_trigger_partitions")]
    pub partitions: u32,
    /// Per-event sleep inside the action.
    #[serde(default)]
    pub sleep_ms: u64,
    /// Per-invocation sleep inside the action.
    #[serde(default)]
    pub invocation_delay_ms: u64,
    #[serde(default = "d_trigger_events")]
    pub events: u64,
    #[serde(default = "d_eval")]
    pub eval_interval_ms: u64,
    #[serde(default = "d_target_lag")]
    pub target_lag_per_worker: u64,
    #[serde(default = "d_one")]
    pub min_concurrency: u32,
    #[serde(default)]
    pub max_concurrency: Option<u32>,
    #[serde(default = "d_one")]
    pub batch_max_records: u32,
    /// Ticks allowed to reach full concurrency.
    #[serde(default = "d_ramp_ticks")]
    pub ramp_ticks: u32,
    /// Ticks allowed to fall back to the minimum once lag is zero.
    #[serde(default = "d_drain_ticks")]
    pub drain_ticks: u32,
    /// Partition-scaling sweep.
    #[serde(default = "d_partition_counts")]
    pub partition_counts: Vec<u32>,
    #[serde(default = "d_speedup")]
    pub min_speedup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitenancySection {
    #[serde(default = "d_topic_counts")]
    pub topic_counts: Vec<u32>,
    #[serde(default = "d_plateau")]
    pub plateau_tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub experiment: ExperimentKind,
    #[serde(default = "d_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub seed: u64,
    /// Free-form resource label (e.g. the R of a use case).
    #[serde(default)]
    pub resources: String,
    /// Where the in-process fabric keeps its logs; a temp dir when unset.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "d_cluster")]
    pub cluster: ClusterSection,
    #[serde(default = "d_topics")]
    pub topics: TopicsSection,
    #[serde(default = "d_producers")]
    pub producers: ProducersSection,
    #[serde(default = "d_consumers")]
    pub consumers: ConsumersSection,
    #[serde(default = "d_trigger")]
    pub trigger: TriggerSection,
    #[serde(default = "d_multitenancy")]
    pub multitenancy: MultitenancySection,
}

fn d_brokers() -> u32 {
    2
}
fn d_one() -> u32 {
    1
}
fn d_event_size() -> usize {
    1024
}
fn d_acks() -> Acks {
    Acks::Leader
}
fn d_events() -> u64 {
    1000
}
fn d_start() -> String {
    "earliest".into()
}
fn d_trigger_partitions() -> u32 {
    16
}
fn d_trigger_events() -> u64 {
    1600
}
fn d_eval() -> u64 {
    1000
}
fn d_target_lag() -> u64 {
    10
}
fn d_ramp_ticks() -> u32 {
    3
}
fn d_drain_ticks() -> u32 {
    2
}
fn d_partition_counts() -> Vec<u32> {
    vec![1, 8]
}
fn d_speedup() -> f64 {
    3.0
}
fn d_topic_counts() -> Vec<u32> {
    vec![1, 2, 4, 8, 16, 32]
}
fn d_plateau() -> f64 {
    0.25
}
fn d_rounds() -> u32 {
    3
}
fn d_cluster() -> ClusterSection {
    ClusterSection {
        brokers: d_brokers(),
        broker_ingress_bytes_per_sec: None,
        notes: String::new(),
    }
}
fn d_topics() -> TopicsSection {
    TopicsSection {
        count: 1,
        partitions: 1,
        replication_factor: 1,
    }
}
fn d_producers() -> ProducersSection {
    ProducersSection {
        count: 1,
        event_size_bytes: d_event_size(),
        acks: d_acks(),
        events_per_producer: d_events(),
        duration_secs: None,
    }
}
fn d_consumers() -> ConsumersSection {
    ConsumersSection {
        count: 0,
        start: d_start(),
    }
}
fn d_trigger() -> TriggerSection {
    toml::from_str("").expect("trigger defaults")
}
fn d_multitenancy() -> MultitenancySection {
    MultitenancySection {
        topic_counts: d_topic_counts(),
        plateau_tolerance: d_plateau(),
    }
}

mod acks_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::broker::Acks;

    pub fn serialize<S: Serializer>(a: &Acks, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&a.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Acks, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(i64),
            S(String),
        }
        let s = match Raw::deserialize(d)? {
            Raw::N(n) => n.to_string(),
            Raw::S(s) => s,
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ExperimentSpec {
    pub fn new(name: &str, experiment: ExperimentKind) -> Self {
        Self {
            name: name.into(),
            experiment,
            rounds: d_rounds(),
            seed: 0,
            resources: String::new(),
            data_dir: None,
            cluster: d_cluster(),
            topics: d_topics(),
            producers: d_producers(),
            consumers: d_consumers(),
            trigger: d_trigger(),
            multitenancy: d_multitenancy(),
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec =
            Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let (Some(d), Some(base)) = (&spec.data_dir, path.parent()) {
            if d.is_relative() {
                spec.data_dir = Some(base.join(d));
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.rounds >= 1, "rounds must be >= 1");
        anyhow::ensure!(self.cluster.brokers >= 1, "cluster.brokers must be >= 1");
        anyhow::ensure!(
            self.producers.duration_secs.is_some() || self.producers.events_per_producer >= 1,
            "fixed-N mode requires producers.events_per_producer >= 1"
        );
        anyhow::ensure!(self.producers.count >= 1, "producers.count must be >= 1");
        anyhow::ensure!(
            self.topics.replication_factor >= 1
                && self.topics.replication_factor <= self.cluster.brokers,
            "topics.replication_factor must be in 1..=cluster.brokers"
        );
        anyhow::ensure!(
            self.topics.partitions >= 1 && self.topics.count >= 1,
            "topics need count and partitions >= 1"
        );
        anyhow::ensure!(
            self.trigger.partitions >= 1,
            "trigger.partitions must be >= 1"
        );
        anyhow::ensure!(
            self.multitenancy.topic_counts.iter().all(|&k| k >= 1),
            "multitenancy.topic_counts must be >= 1"
        );
        anyhow::ensure!(
            self.trigger.partition_counts.iter().all(|&k| k >= 1),
            "trigger.partition_counts must be >= 1"
        );
        self.consumers
            .start
            .parse::<crate::client::StartPosition>()
            .map_err(anyhow::Error::msg)?;
        Ok(())
    }
}
